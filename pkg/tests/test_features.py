import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flixlab import linalg
from flixlab.errors import ConfigError, DomainError, ShapeError, UnknownFeatureError
from flixlab.features import (Feature, FeatureRegistry, Metadata, LANGUAGE, SHARED, TASK,
                              check_vector, feature_dropout, featurize,
                              mask_for_unseen_language)


@pytest.fixture
def reg():
    return FeatureRegistry([Feature("copy", TASK, 2), Feature("shift", TASK, 2),
                            Feature("alpha", LANGUAGE, 4), Feature("beta", LANGUAGE, 4)])


@pytest.fixture
def reg_shared(reg):
    return FeatureRegistry(list(reg) + [Feature("g", SHARED, 1)])


def test_registry_basics(reg):
    assert reg.D == 4
    assert reg.names == ["copy", "shift", "alpha", "beta"]
    assert reg.ranks == [2, 2, 4, 4]
    assert reg.index("beta") == 3
    assert reg.shared_index is None
    assert not reg.unconditional


@pytest.mark.parametrize("features, msg", [
    ([Feature("a", TASK, 1), Feature("a", LANGUAGE, 1)], "duplicate"),
    ([Feature("a", TASK, 0)], "rank"),
    ([Feature("g", SHARED, 1), Feature("h", SHARED, 1)], "shared"),
    ([Feature("a", "topic", 1)], "kind"),
    ([], "at least one"),
])
def test_registry_rejects(features, msg):
    with pytest.raises(ConfigError, match=msg):
        FeatureRegistry(features)


def test_registry_json_round_trip(reg_shared):
    assert FeatureRegistry.from_json(reg_shared.to_json()) == reg_shared


def test_featurize(reg):
    np.testing.assert_array_equal(featurize(Metadata("shift", "alpha"), reg), [0, 1, 1, 0])


def test_featurize_with_shared(reg_shared):
    np.testing.assert_array_equal(featurize(Metadata("copy", "beta"), reg_shared), [1, 0, 0, 1, 1])


def test_featurize_unknown(reg):
    with pytest.raises(UnknownFeatureError) as info:
        featurize(Metadata("unknown", "alpha"), reg)
    assert info.value.name == "unknown"
    with pytest.raises(UnknownFeatureError, match="gamma"):
        featurize(Metadata("copy", "gamma"), reg)


def test_featurize_kind_matters(reg):
    # a language name is not a task
    with pytest.raises(UnknownFeatureError):
        featurize(Metadata("alpha", "beta"), reg)


def test_metadata_non_empty():
    with pytest.raises(DomainError):
        Metadata("", "alpha")


def test_dropout_extremes(reg_shared):
    fv = featurize(Metadata("copy", "beta"), reg_shared)
    rng = linalg.make_rng(0)
    np.testing.assert_array_equal(feature_dropout(fv, 0.0, rng), fv)
    assert not feature_dropout(fv, 1.0, rng).any()


def test_dropout_exempt_keeps_shared(reg_shared):
    fv = featurize(Metadata("copy", "beta"), reg_shared)
    out = feature_dropout(fv, 1.0, linalg.make_rng(0), reg_shared.dropout_exempt())
    np.testing.assert_array_equal(out, [0, 0, 0, 0, 1])
    out = feature_dropout(fv, 1.0, linalg.make_rng(0), reg_shared.dropout_exempt(drop_shared=True))
    assert not out.any()


def test_dropout_rejects_bad_probability():
    with pytest.raises(DomainError):
        feature_dropout(np.array([True]), 1.5, linalg.make_rng(0))
    with pytest.raises(DomainError):
        feature_dropout(np.array([True]), -0.1, linalg.make_rng(0))


def test_dropout_survival_rate():
    # Monte-Carlo oracle: each active bit survives with probability 1 - p
    rng = linalg.make_rng(11)
    fv = np.array([True, False, True, False])
    kept = np.zeros(4)
    trials = 100_000
    for _ in range(trials):
        kept += feature_dropout(fv, 0.7, rng)
    rates = kept / trials
    assert abs(rates[0] - 0.30) <= 0.01 and abs(rates[2] - 0.30) <= 0.01
    assert rates[1] == 0 and rates[3] == 0


def test_mask_for_unseen_language(reg, reg_shared):
    np.testing.assert_array_equal(mask_for_unseen_language(Metadata("copy", "konkani"), reg),
                                  [1, 0, 0, 0])
    np.testing.assert_array_equal(mask_for_unseen_language(Metadata("copy", "zz"), reg_shared),
                                  [1, 0, 0, 0, 1])
    with pytest.raises(UnknownFeatureError):
        mask_for_unseen_language(Metadata("unknownTask", "zz"), reg)


def test_mask_refuses_known_language(reg):
    with pytest.raises(ConfigError):
        mask_for_unseen_language(Metadata("copy", "alpha"), reg)


def test_unseen_combination_needs_no_special_case(reg):
    # every (task, language) pair featurizes, trained together or not
    for t in ("copy", "shift"):
        for l in ("alpha", "beta"):
            assert featurize(Metadata(t, l), reg).sum() == 2


def test_check_vector_length(reg):
    with pytest.raises(ShapeError):
        check_vector([True, False], reg)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=12), st.floats(0, 1), st.integers(0, 2**32))
def test_dropout_never_sets_bits(bits, p, seed):
    fv = np.array(bits)
    out = feature_dropout(fv, p, linalg.make_rng(seed))
    assert not (out & ~fv).any()
    assert out.sum() <= fv.sum()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=12), st.integers(0, 2**32))
def test_dropout_zero_is_identity(bits, seed):
    fv = np.array(bits)
    assert feature_dropout(fv, 0.0, linalg.make_rng(seed)).tobytes() == fv.tobytes()


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.booleans(), st.data())
def test_featurize_popcount(n_tasks, n_langs, shared, data):
    reg = FeatureRegistry.from_schedule([f"t{i}" for i in range(n_tasks)],
                                        [f"l{i}" for i in range(n_langs)], 1, 1,
                                        ("g", 1) if shared else None)
    t = data.draw(st.integers(0, n_tasks - 1))
    l = data.draw(st.integers(0, n_langs - 1))
    fv = featurize(Metadata(f"t{t}", f"l{l}"), reg)
    assert fv.sum() == (3 if shared else 2)
    assert np.array_equal(fv, featurize(Metadata(f"t{t}", f"l{l}"), reg))
