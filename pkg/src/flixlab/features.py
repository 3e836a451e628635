"""Feature catalog, featurization, feature dropout and zero-shot masks.

A feature vector is a boolean ``numpy`` array of length ``D`` aligned
with a :class:`FeatureRegistry`.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, ShapeError, UnknownFeatureError

TASK = "task"
LANGUAGE = "language"
SHARED = "shared"
KINDS = (TASK, LANGUAGE, SHARED)


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str
    rank: int


@dataclass(frozen=True)
class Metadata:
    task: str
    language: str

    def __post_init__(self):
        if not self.task or not self.language:
            raise DomainError("metadata task and language must be non-empty strings")


class FeatureRegistry:
    """Ordered, immutable list of named features with per-feature ranks."""

    def __init__(self, features):
        features = tuple(Feature(f.name, f.kind, int(f.rank)) for f in features)
        if not features:
            raise ConfigError("a feature registry needs at least one feature")
        lookup = {}
        for i, f in enumerate(features):
            if f.kind not in KINDS:
                raise ConfigError(f"feature {f.name!r} has unknown kind {f.kind!r}")
            if f.rank < 1:
                raise ConfigError(f"feature {f.name!r} must have rank >= 1, got {f.rank}")
            if f.name in lookup:
                raise ConfigError(f"duplicate feature name {f.name!r}")
            lookup[f.name] = i
        shared = [i for i, f in enumerate(features) if f.kind == SHARED]
        if len(shared) > 1:
            raise ConfigError("at most one shared feature is allowed")
        self._features = features
        self._lookup = lookup
        self._shared = shared[0] if shared else None

    @classmethod
    def from_schedule(cls, tasks, languages, task_rank, language_rank, shared=None):
        """Tasks, then languages, then the optional ``(name, rank)`` shared feature."""
        feats = [Feature(t, TASK, task_rank) for t in tasks]
        feats += [Feature(l, LANGUAGE, language_rank) for l in languages]
        if shared is not None:
            feats.append(Feature(shared[0], SHARED, shared[1]))
        return cls(feats)

    @classmethod
    def single(cls, rank, name="lora"):
        """One always-active feature: the plain LoRA layout."""
        return cls([Feature(name, SHARED, rank)])

    def __len__(self):
        return len(self._features)

    def __iter__(self):
        return iter(self._features)

    def __getitem__(self, i):
        return self._features[i]

    def __eq__(self, other):
        return isinstance(other, FeatureRegistry) and self._features == other._features

    def __hash__(self):
        return hash(self._features)

    def __repr__(self):
        body = ", ".join(f"{f.kind[0].upper()}:{f.name}/{f.rank}" for f in self._features)
        return f"FeatureRegistry([{body}])"

    @property
    def D(self):
        return len(self._features)

    @property
    def ranks(self):
        return [f.rank for f in self._features]

    @property
    def names(self):
        return [f.name for f in self._features]

    @property
    def shared_index(self):
        return self._shared

    def names_of(self, kind):
        return [f.name for f in self._features if f.kind == kind]

    @property
    def unconditional(self):
        """True when no task or language feature exists (LoRA baselines)."""
        return all(f.kind == SHARED for f in self._features)

    def has(self, name, kind=None):
        i = self._lookup.get(name)
        return i is not None and (kind is None or self._features[i].kind == kind)

    def index(self, name, kind=None):
        i = self._lookup.get(name)
        if i is None or (kind is not None and self._features[i].kind != kind):
            raise UnknownFeatureError(name, kind)
        return i

    def empty_vector(self):
        return np.zeros(self.D, dtype=bool)

    def shared_vector(self):
        fv = self.empty_vector()
        if self._shared is not None:
            fv[self._shared] = True
        return fv

    def dropout_exempt(self, drop_shared=False):
        """Indices that feature dropout leaves untouched."""
        if drop_shared or self._shared is None:
            return ()
        return (self._shared,)

    def to_json(self):
        return [{"name": f.name, "kind": f.kind, "rank": f.rank} for f in self._features]

    @classmethod
    def from_json(cls, entries):
        return cls([Feature(e["name"], e["kind"], e["rank"]) for e in entries])


def check_vector(fv, reg_or_d):
    d = reg_or_d if isinstance(reg_or_d, int) else len(reg_or_d)
    fv = np.asarray(fv, dtype=bool)
    if fv.ndim != 1 or fv.shape[0] != d:
        raise ShapeError(f"feature vector has length {fv.size}, expected {d}")
    return fv


def featurize(meta, reg):
    """Activate the task, language and (if declared) shared features of ``meta``."""
    fv = reg.shared_vector()
    fv[reg.index(meta.task, TASK)] = True
    fv[reg.index(meta.language, LANGUAGE)] = True
    return fv


def mask_for_unseen_language(meta, reg):
    """Feature vector for a language the registry has never seen: task (and shared) only."""
    if reg.has(meta.language, LANGUAGE):
        raise ConfigError(f"language {meta.language!r} is known to the registry; "
                          "masking it would discard trained parameters")
    fv = reg.shared_vector()
    fv[reg.index(meta.task, TASK)] = True
    return fv


def feature_dropout(fv, p, rng, exempt=()):
    """Clear each active bit independently with probability ``p``.

    Bits listed in ``exempt`` are never cleared. One uniform is drawn per
    position regardless of its state, so the stream advances by ``len(fv)``.
    Surviving features are not rescaled.
    """
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"dropout probability must lie in [0, 1], got {p}")
    fv = np.asarray(fv, dtype=bool)
    u = rng.random(fv.shape[0])
    out = fv & ~(u < p)
    for i in exempt:
        out[i] = fv[i]
    return out
