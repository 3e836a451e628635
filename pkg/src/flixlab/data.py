"""Synthetic compositional task x language transduction benchmark.

Every cell ``(task, language)`` maps a token ``x`` over an alphabet of
size ``A`` to ``(a_task * x + b_language) mod A``. Tasks contribute the
multiplier, languages the offset, so a held-out combination is only
solvable by composing what was learned about its task and its language
separately.
"""

import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError
from .features import Metadata

SPLITS = ("train", "valid", "test")


@dataclass(frozen=True)
class SyntheticSpec:
    alphabet_size: int = 11
    tasks: tuple = (("copy", 1), ("double", 2), ("triple", 3))
    languages: tuple = (("alpha", 0), ("beta", 3), ("gamma", 5), ("delta", 8))
    seq_len_range: tuple = (4, 8)
    examples_per_cell: int = 512
    eval_examples_per_cell: int = 128
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple((str(n), int(a)) for n, a in self.tasks))
        object.__setattr__(self, "languages", tuple((str(n), int(b)) for n, b in self.languages))
        object.__setattr__(self, "seq_len_range", tuple(int(x) for x in self.seq_len_range))
        A = self.alphabet_size
        if A < 2:
            raise ConfigError(f"alphabet_size must be >= 2, got {A}")
        if not self.tasks or not self.languages:
            raise ConfigError("at least one task and one language are required")
        for name, a in self.tasks:
            if math.gcd(a, A) != 1:
                raise ConfigError(f"task {name!r}: multiplier {a} is not coprime with {A}")
        mults = [a % A for _, a in self.tasks]
        if len(set(mults)) != len(mults):
            raise ConfigError("task multipliers must be pairwise distinct")
        for name, b in self.languages:
            if not 0 <= b < A:
                raise ConfigError(f"language {name!r}: offset {b} outside [0, {A})")
        offsets = [b for _, b in self.languages]
        if len(set(offsets)) != len(offsets):
            raise ConfigError("language offsets must be pairwise distinct")
        names = [n for n, _ in self.tasks] + [n for n, _ in self.languages]
        if len(set(names)) != len(names):
            raise ConfigError("task and language names must be unique")
        lo, hi = self.seq_len_range
        if not 1 <= lo <= hi:
            raise ConfigError(f"invalid seq_len_range {self.seq_len_range}")
        if self.examples_per_cell < 0 or self.eval_examples_per_cell < 0:
            raise ConfigError("example counts must be non-negative")

    @property
    def task_names(self):
        return [n for n, _ in self.tasks]

    @property
    def language_names(self):
        return [n for n, _ in self.languages]

    def multiplier(self, task):
        for n, a in self.tasks:
            if n == task:
                return a
        raise ConfigError(f"unknown task {task!r}")

    def offset(self, language):
        for n, b in self.languages:
            if n == language:
                return b
        raise ConfigError(f"unknown language {language!r}")

    def gold(self, task, language, tokens):
        a, b = self.multiplier(task), self.offset(language)
        return [(a * int(x) + b) % self.alphabet_size for x in tokens]

    def count(self, split):
        return self.examples_per_cell if split == "train" else self.eval_examples_per_cell


@dataclass(frozen=True)
class Example:
    tokens: tuple
    targets: tuple
    meta: Metadata

    def __post_init__(self):
        if len(self.tokens) != len(self.targets):
            raise ShapeError("tokens and targets differ in length")

    @property
    def cell(self):
        return (self.meta.task, self.meta.language)


@dataclass(frozen=True)
class SplitPlan:
    """Which cells train, validate and test, plus what is held out.

    ``valid_cells`` are in-distribution; ``test_cells`` typically add the
    held-out combinations and the cells of held-out languages.
    """

    train_cells: frozenset
    valid_cells: frozenset
    test_cells: frozenset
    heldout_combinations: frozenset = field(default_factory=frozenset)
    heldout_languages: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        for name in ("train_cells", "valid_cells", "test_cells", "heldout_combinations"):
            object.__setattr__(self, name, frozenset(tuple(c) for c in getattr(self, name)))
        object.__setattr__(self, "heldout_languages", frozenset(self.heldout_languages))
        if not self.train_cells:
            raise ConfigError("split plan has no training cells")
        clash = self.heldout_combinations & self.train_cells
        if clash:
            raise ConfigError(f"held-out combinations appear in training: {sorted(clash)}")
        train_tasks = {t for t, _ in self.train_cells}
        train_langs = {l for _, l in self.train_cells}
        leaked = self.heldout_languages & train_langs
        if leaked:
            raise ConfigError(f"held-out languages appear in training: {sorted(leaked)}")
        for t, l in self.heldout_combinations:
            if t not in train_tasks or l not in train_langs:
                raise ConfigError(f"held-out combination ({t}, {l}) is not an unseen "
                                  "combination: its task or language never trains")

    @classmethod
    def grid(cls, spec, heldout_combinations=(), heldout_languages=()):
        """Full task x language grid minus held-out cells and languages."""
        hc = frozenset(tuple(c) for c in heldout_combinations)
        hl = frozenset(heldout_languages)
        unknown = ({t for t, _ in hc} - set(spec.task_names)) | \
                  (({l for _, l in hc} | hl) - set(spec.language_names))
        if unknown:
            raise ConfigError(f"split plan references unknown names: {sorted(unknown)}")
        train = frozenset((t, l) for t in spec.task_names for l in spec.language_names
                          if (t, l) not in hc and l not in hl)
        unseen_lang = frozenset((t, l) for t in spec.task_names for l in hl)
        return cls(train, train, train | hc | unseen_lang, hc, hl)

    def cells(self, split):
        return {"train": self.train_cells, "valid": self.valid_cells,
                "test": self.test_cells}[split]

    @property
    def unseen_language_cells(self):
        return frozenset(c for c in self.test_cells if c[1] in self.heldout_languages)


def cell_seed(seed, task, language, split):
    return np.random.SeedSequence([seed, zlib.crc32(task.encode()),
                                   zlib.crc32(language.encode()), SPLITS.index(split)])


def generate_cell(spec, task, language, split, n=None):
    """``n`` examples for one cell; deterministic in (seed, task, language, split)."""
    if n is None:
        n = spec.count(split)
    a, b = spec.multiplier(task), spec.offset(language)
    rng = np.random.Generator(np.random.PCG64(cell_seed(spec.seed, task, language, split)))
    lo, hi = spec.seq_len_range
    meta = Metadata(task, language)
    out = []
    for _ in range(n):
        tokens = rng.integers(0, spec.alphabet_size, size=int(rng.integers(lo, hi + 1)))
        targets = (a * tokens + b) % spec.alphabet_size
        out.append(Example(tuple(int(x) for x in tokens), tuple(int(y) for y in targets), meta))
    return out


def generate(spec, plan):
    """Map ``(task, language, split)`` to examples for every cell of the plan."""
    tasks, langs = set(spec.task_names), set(spec.language_names)
    for split in SPLITS:
        for t, l in plan.cells(split):
            if t not in tasks or l not in langs:
                raise ConfigError(f"plan cell ({t}, {l}) is not in the synthetic benchmark")
    return {(t, l, split): generate_cell(spec, t, l, split)
            for split in SPLITS for t, l in sorted(plan.cells(split))}


def by_cell(datasets, split):
    return {(t, l): ex for (t, l, s), ex in datasets.items() if s == split}


def exact_match(predictions, references):
    """Percentage of examples whose whole predicted sequence equals the reference."""
    if len(predictions) != len(references):
        raise ShapeError(f"{len(predictions)} predictions for {len(references)} references")
    if not references:
        return 0.0
    hits = sum(tuple(p) == tuple(r) for p, r in zip(predictions, references))
    return 100.0 * hits / len(references)


def _f1(pred, ref):
    from collections import Counter
    common = sum((Counter(pred) & Counter(ref)).values())
    if common == 0:
        return 0.0
    p, r = common / len(pred), common / len(ref)
    return 2 * p * r / (p + r)


def token_f1(predictions, references):
    """Macro-averaged bag-of-tokens F1, in [0, 100]."""
    if len(predictions) != len(references):
        raise ShapeError(f"{len(predictions)} predictions for {len(references)} references")
    if not references:
        return 0.0
    return 100.0 * sum(_f1(list(p), list(r)) for p, r in zip(predictions, references)) / len(references)


def token_accuracy(predictions, references):
    """Percentage of positions predicted correctly (sequences are aligned)."""
    if len(predictions) != len(references):
        raise ShapeError(f"{len(predictions)} predictions for {len(references)} references")
    hits = total = 0
    for p, r in zip(predictions, references):
        if len(p) != len(r):
            raise ShapeError("prediction and reference lengths differ")
        hits += sum(int(x == y) for x, y in zip(p, r))
        total += len(r)
    return 100.0 * hits / total if total else 0.0


def write_tsv(path, examples):
    """``task<TAB>language<TAB>tokens<TAB>targets`` per line, UTF-8, LF."""
    lines = [f"{e.meta.task}\t{e.meta.language}\t{' '.join(map(str, e.tokens))}\t"
             f"{' '.join(map(str, e.targets))}\n" for e in examples]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(lines), encoding="utf-8", newline="\n")


def read_tsv(path):
    out = []
    text = Path(path).read_text(encoding="utf-8")
    for n, line in enumerate(text.split("\n"), 1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ConfigError(f"{path}:{n}: expected 4 tab-separated fields, got {len(parts)}")
        task, lang, toks, tgts = parts
        out.append(Example(tuple(int(x) for x in toks.split()),
                           tuple(int(y) for y in tgts.split()), Metadata(task, lang)))
    return out
