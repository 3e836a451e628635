import math

import numpy as np
import pytest

from flixlab.adapters import effective_weight
from flixlab.data import SplitPlan, SyntheticSpec, by_cell, generate
from flixlab.errors import ConfigError, UnknownFeatureError
from flixlab.features import Feature, FeatureRegistry, LANGUAGE, SHARED, TASK
from flixlab.model import FrozenBase, TaggerModel
from flixlab.train import (AdamState, TrainConfig, adam_step, baseline_rank, evaluate,
                           mean_metric, sgd_step, train, train_baseline_lora)

SPEC = SyntheticSpec(examples_per_cell=48, eval_examples_per_cell=16)
PLAN = SplitPlan.grid(SPEC, [("copy", "alpha")], ["delta"])


@pytest.fixture(scope="module")
def datasets():
    return generate(SPEC, PLAN)


@pytest.fixture
def registry():
    return FeatureRegistry.from_schedule(SPEC.task_names, ["alpha", "beta", "gamma"], 2, 4)


@pytest.fixture(scope="module")
def base():
    return FrozenBase.random(11, 16, 1234)


def small_cfg(**kw):
    base = dict(max_steps=40, eval_every=20, batch_size=8, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_sgd_step():
    p = np.array([1.0])
    sgd_step([p], [np.array([2.0])], 0.1)
    assert p[0] == pytest.approx(0.8, abs=1e-15)
    q = np.array([1.5, -2.0])
    sgd_step([q], [np.zeros(2)], 0.1)
    assert q.tolist() == [1.5, -2.0]


def test_adam_zero_gradient_is_exact_noop():
    p = np.array([[0.3, -1.2]])
    before = p.copy()
    state = AdamState.like([p])
    adam_step([p], [np.zeros_like(p)], state, small_cfg())
    assert p.tobytes() == before.tobytes()


def scalar_adam(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


def test_adam_matches_scalar_reference():
    cfg = small_cfg(learning_rate=0.01)
    grads = [0.5, -1.5, 2.0, 0.1]
    p = np.array([1.0])
    state = AdamState.like([p])
    for g in grads:
        adam_step([p], [np.array([g])], state, cfg)
    assert p[0] == pytest.approx(scalar_adam(1.0, grads, 0.01), abs=1e-15)


def test_adam_first_step_magnitude():
    cfg = small_cfg(learning_rate=0.01)
    p = np.array([0.0, 0.0, 0.0])
    adam_step([p], [np.array([3.0, -1e-3, 50.0])], AdamState.like([p]), cfg)
    assert np.all(np.abs(p) <= 0.01 * (1 + 1e-6))
    assert np.all(np.abs(p) >= 0.0099)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(eval_every=300, max_steps=200)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(optimizer="rmsprop")
    assert TrainConfig(optimizer="sgd").learning_rate == 0.05
    assert TrainConfig().learning_rate == 0.005
    TrainConfig(max_steps=0)


def test_max_steps_zero_selects_initial(datasets, registry, base):
    model = TaggerModel.build(base, registry, 0)
    report = train(model, datasets, TrainConfig(max_steps=0))
    assert report.selected_step == 0 and len(report.evals) == 1
    model.restore(report.best)
    fv = np.ones(registry.D, bool)
    assert effective_weight(base.w1, model.bank1, fv).tobytes() == base.w1.tobytes()
    assert effective_weight(base.w2, model.bank2, fv).tobytes() == base.w2.tobytes()


def test_training_deterministic(datasets, registry, base):
    reports = []
    for _ in range(2):
        model = TaggerModel.build(base, registry, 5)
        reports.append(train(model, datasets, small_cfg()))
    assert reports[0].dumps() == reports[1].dumps()
    assert reports[0].loss_history == reports[1].loss_history


def test_seed_changes_trajectory(datasets, registry, base):
    one = train(TaggerModel.build(base, registry, 5), datasets, small_cfg(seed=1))
    two = train(TaggerModel.build(base, registry, 5), datasets, small_cfg(seed=2))
    assert one.loss_history != two.loss_history


def test_unknown_feature_before_any_step(datasets, base):
    reg = FeatureRegistry.from_schedule(["copy", "double"], ["alpha", "beta", "gamma"], 2, 4)
    model = TaggerModel.build(base, reg, 0)
    before = [p.copy() for p in model.parameters()]
    with pytest.raises(UnknownFeatureError):
        train(model, datasets, small_cfg())
    assert all(np.array_equal(p, q) for p, q in zip(before, model.parameters()))


def test_selection_rule(datasets, registry, base):
    report = train(TaggerModel.build(base, registry, 1), datasets,
                   small_cfg(max_steps=120, eval_every=20))
    steps = [e["step"] for e in report.evals]
    assert steps == [0, 20, 40, 60, 80, 100, 120]
    best = max(e["mean_exact_match"] for e in report.evals)
    first = next(e["step"] for e in report.evals if e["mean_exact_match"] == best)
    assert (report.selected_step, report.selected_metric) == (first, best)
    doc = report.to_json()
    assert doc["selection"]["selected_step"] == first


def test_loss_decreases_and_base_frozen(datasets, registry, base):
    before = base.fingerprint()
    report = train(TaggerModel.build(base, registry, 1), datasets,
                   small_cfg(max_steps=200, eval_every=50, batch_size=16))
    assert report.evals[-1]["train_loss"] < report.evals[1]["train_loss"]
    assert base.fingerprint() == before


def test_sgd_training_runs(datasets, registry, base):
    report = train(TaggerModel.build(base, registry, 1), datasets, small_cfg(optimizer="sgd"))
    assert report.loss_history[-1] < report.loss_history[0] + 1.0


def test_evaluate_modes(datasets, registry, base):
    model = TaggerModel.build(base, registry, 0)
    test = by_cell(datasets, "test")
    m = evaluate(model, {("copy", "beta"): test[("copy", "beta")]})
    assert set(m[("copy", "beta")]) == {"exact_match", "token_f1", "token_accuracy"}
    evaluate(model, {("copy", "delta"): test[("copy", "delta")]}, "unseen_language")
    with pytest.raises(ConfigError):
        evaluate(model, {("copy", "beta"): test[("copy", "beta")]}, "unseen_language")
    with pytest.raises(UnknownFeatureError):
        evaluate(model, {("copy", "delta"): test[("copy", "delta")]}, "standard")
    with pytest.raises(ConfigError):
        evaluate(model, {("copy", "beta"): []}, "bogus")


def test_zero_init_chance_level():
    spec = SyntheticSpec(examples_per_cell=0, eval_examples_per_cell=400)
    data = generate(spec, SplitPlan.grid(spec))
    reg = FeatureRegistry.from_schedule(spec.task_names, spec.language_names, 2, 4)
    accs, ems = [], []
    for seed in range(5):
        model = TaggerModel.build(FrozenBase.random(11, 64, seed), reg, 0)
        m = evaluate(model, by_cell(data, "test"))
        accs.append(mean_metric(m, "token_accuracy"))
        ems.append(mean_metric(m))
    assert abs(np.mean(accs) - 100 / 11) < 4.0
    assert np.mean(ems) < 1.0


def test_perfect_model_scores_100():
    # hand-built copy model: one-hot embeddings, identity matrices
    spec = SyntheticSpec(alphabet_size=5, tasks=(("copy", 1),), languages=(("x", 0),),
                         examples_per_cell=0, eval_examples_per_cell=20)
    data = generate(spec, SplitPlan.grid(spec))
    base = FrozenBase(np.eye(5), np.eye(5), np.eye(5))
    reg = FeatureRegistry.from_schedule(["copy"], ["x"], 1, 1)
    model = TaggerModel.build(base, reg, 0)
    assert evaluate(model, by_cell(data, "test"))[("copy", "x")]["exact_match"] == 100.0


def test_baseline_ranks(datasets, registry, base):
    assert baseline_rank("compute_matched", registry, datasets, 16, 11) == 6
    assert baseline_rank("param_matched", registry, datasets, 16, 11) == 3 * 2 + 3 * 4
    reg7 = FeatureRegistry([Feature(f"t{i}", TASK, r) for i, r in enumerate([2, 2, 4])] +
                           [Feature(f"l{i}", LANGUAGE, r) for i, r in enumerate([4, 4, 4, 2])])
    assert sum(reg7.ranks) == 22
    assert baseline_rank("param_matched", reg7, datasets, 16, 11) == 22
    single = FeatureRegistry([Feature("only", SHARED, 5)])
    assert baseline_rank("compute_matched", single, datasets, 16, 11) == \
        baseline_rank("param_matched", single, datasets, 16, 11) == 5
    with pytest.raises(ConfigError):
        baseline_rank("bogus", registry, datasets, 16, 11)


def test_baseline_equals_single_feature_flix(datasets, base):
    cfg = small_cfg()
    reg = FeatureRegistry([Feature("always", SHARED, 3)])
    flix = TaggerModel.build(base, reg, cfg.seed)
    flix_report = train(flix, datasets, cfg)
    lora, lora_report = train_baseline_lora("compute_matched", base, reg, datasets, cfg)
    assert lora.registry.ranks == [3]
    assert flix_report.metric_table() == lora_report.metric_table()
    assert flix_report.loss_history == lora_report.loss_history
    assert all(x.tobytes() == y.tobytes() for x, y in zip(flix.parameters(), lora.parameters()))
