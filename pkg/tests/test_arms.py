import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from whittleq.arms import (FeatureMap, check_arm, check_feature_map,
                           circulant_instance, load_arm, load_feature_map,
                           make_arm, one_hot_features, random_arm,
                           sample_next, validate)
from whittleq.errors import ValidationError


def test_circulant_tables(arm):
    shift_up = np.array([
        [0.5, 0.5, 0.0, 0.0],
        [0.0, 0.5, 0.5, 0.0],
        [0.0, 0.0, 0.5, 0.5],
        [0.5, 0.0, 0.0, 0.5],
    ])
    np.testing.assert_array_equal(arm.kernel_active, shift_up)
    np.testing.assert_array_equal(arm.kernel_passive, shift_up.T)
    np.testing.assert_array_equal(arm.reward[:, 0], [-1.0, 0.0, 0.0, 1.0])
    np.testing.assert_array_equal(arm.reward[:, 0], arm.reward[:, 1])
    assert arm.num_states == 4


def test_circulant_is_valid(arm):
    assert validate(arm) == []


def test_kernels_stack(arm):
    stacked = arm.kernels()
    np.testing.assert_array_equal(stacked[0], arm.kernel_passive)
    np.testing.assert_array_equal(stacked[1], arm.kernel_active)


def test_make_arm_rejects_bad_row_sum():
    k = np.eye(2)
    bad = np.array([[0.7, 0.7], [0.5, 0.5]])
    with pytest.raises(ValidationError) as err:
        make_arm(bad, k, np.zeros((2, 2)))
    assert "row 1" in str(err.value)  # states are 1-indexed in messages


def test_make_arm_rejects_negative_entry():
    k = np.eye(2)
    bad = np.array([[1.5, -0.5], [0.0, 1.0]])
    with pytest.raises(ValidationError, match="negative"):
        make_arm(bad, k, np.zeros((2, 2)))


def test_make_arm_rejects_bad_reward_shape():
    k = np.eye(2)
    with pytest.raises(ValidationError, match="shape"):
        make_arm(k, k, np.zeros((2, 3)))


def test_make_arm_rejects_nonfinite():
    k = np.eye(2)
    r = np.zeros((2, 2))
    r[0, 0] = np.nan
    with pytest.raises(ValidationError, match="non-finite"):
        make_arm(k, k, r)


def test_validate_collects_all_violations():
    arm = circulant_instance()
    bad_passive = arm.kernel_passive.copy()
    bad_passive[0] *= 2.0
    bad_active = arm.kernel_active.copy()
    bad_active[2] *= 0.5
    broken = type(arm)(num_states=4, kernel_passive=bad_passive,
                       kernel_active=bad_active, reward=arm.reward)
    messages = validate(broken)
    assert len(messages) == 2
    assert any("kernel_passive row 1" in m for m in messages)
    assert any("kernel_active row 3" in m for m in messages)


def test_one_hot_features_structure():
    fmap = one_hot_features(4)
    assert fmap.dim == 8
    assert fmap.table.shape == (4, 2, 8)
    np.testing.assert_array_equal(fmap.matrix(), np.eye(8))
    # pair ordering is all passive rows then all active rows
    np.testing.assert_array_equal(fmap.table[2, 1], np.eye(8)[6])


def test_one_hot_rejects_tiny_state_count():
    with pytest.raises(ValidationError):
        one_hot_features(1)


def test_feature_map_norm_cap():
    table = np.zeros((2, 2, 4))
    table[0, 0, 0] = 2.0  # norm 2 > 1
    table[0, 1, 1] = 1.0
    table[1, 0, 2] = 1.0
    table[1, 1, 3] = 1.0
    with pytest.raises(ValidationError, match="norm"):
        check_feature_map(FeatureMap(dim=4, table=table))


def test_feature_map_rank_check():
    table = np.zeros((2, 2, 4))
    table[0, 0, 0] = 1.0
    table[0, 1, 0] = 1.0  # duplicate direction -> dependent rows
    table[1, 0, 2] = 1.0
    table[1, 1, 3] = 1.0
    with pytest.raises(ValidationError, match="dependent"):
        check_feature_map(FeatureMap(dim=4, table=table))


def test_sample_next_deterministic(arm):
    a = sample_next(arm, 2, 1, np.random.default_rng(5))
    b = sample_next(arm, 2, 1, np.random.default_rng(5))
    assert a == b
    assert a.reward == arm.reward[2, 1]


def test_sample_next_degenerate_kernel():
    k = np.eye(3)
    arm = make_arm(k, k, np.zeros((3, 2)))
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert sample_next(arm, 1, 0, rng).next_state == 1


def test_sample_next_range_checks(arm, rng):
    with pytest.raises(ValidationError):
        sample_next(arm, 7, 0, rng)
    with pytest.raises(ValidationError):
        sample_next(arm, 0, 2, rng)


def test_sample_next_empirical_frequencies(arm):
    rng = np.random.default_rng(42)
    hits = np.zeros(4)
    n = 20_000
    for _ in range(n):
        hits[sample_next(arm, 0, 1, rng).next_state] += 1
    # row 1 of the active kernel is (1/2, 1/2, 0, 0)
    assert hits[2] == hits[3] == 0
    assert abs(hits[0] / n - 0.5) < 0.02


def test_random_arm_valid_and_seeded():
    a = random_arm(3, np.random.default_rng(9))
    b = random_arm(3, np.random.default_rng(9))
    assert validate(a) == []
    np.testing.assert_array_equal(a.kernel_passive, b.kernel_passive)
    np.testing.assert_array_equal(a.reward, b.reward)


def test_load_arm_round_trip(tmp_path, arm):
    def rows(m):
        return ",\n".join(
            "[" + ", ".join(repr(float(x)) for x in row) + "]" for row in m)

    text = (f"num_states = 4\n"
            f"kernel_passive = [\n{rows(arm.kernel_passive)}]\n"
            f"kernel_active = [\n{rows(arm.kernel_active)}]\n"
            f"reward = [\n{rows(arm.reward)}]\n")
    path = tmp_path / "arm.toml"
    path.write_text(text)
    loaded = load_arm(path)
    np.testing.assert_array_equal(loaded.kernel_passive, arm.kernel_passive)
    np.testing.assert_array_equal(loaded.kernel_active, arm.kernel_active)
    np.testing.assert_array_equal(loaded.reward, arm.reward)


def test_load_arm_missing_key(tmp_path):
    path = tmp_path / "arm.toml"
    path.write_text("num_states = 2\n")
    with pytest.raises(ValidationError, match="missing keys"):
        load_arm(path)


def test_load_arm_rejects_non_stochastic(tmp_path):
    path = tmp_path / "arm.toml"
    path.write_text(
        "num_states = 2\n"
        "kernel_passive = [[0.9, 0.9], [0.5, 0.5]]\n"
        "kernel_active = [[1.0, 0.0], [0.0, 1.0]]\n"
        "reward = [[0.0, 0.0], [0.0, 0.0]]\n")
    with pytest.raises(ValidationError, match="sums to"):
        load_arm(path)


def test_load_feature_map_round_trip(tmp_path):
    fmap = one_hot_features(2)
    table = "[" + ", ".join(
        "[" + ", ".join("[" + ", ".join(repr(float(x)) for x in vec) + "]"
                        for vec in pair) + "]"
        for pair in fmap.table) + "]"
    path = tmp_path / "features.toml"
    path.write_text(f"dim = 4\ntable = {table}\n")
    loaded = load_feature_map(path)
    np.testing.assert_array_equal(loaded.table, fmap.table)


def test_load_feature_map_requires_keys(tmp_path):
    path = tmp_path / "features.toml"
    path.write_text("dim = 4\n")
    with pytest.raises(ValidationError, match="table"):
        load_feature_map(path)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), s=st.integers(2, 6))
def test_random_arms_always_validate(seed, s):
    arm = random_arm(s, np.random.default_rng(seed))
    assert validate(arm) == []
    assert check_arm(arm) is arm


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), s=st.integers(2, 5),
       row=st.integers(0, 4), scale=st.floats(1.5, 4.0))
def test_scaled_row_always_rejected(seed, s, row, scale):
    arm = random_arm(s, np.random.default_rng(seed))
    bad = arm.kernel_active.copy()
    bad[row % s] *= scale
    broken = type(arm)(num_states=s, kernel_passive=arm.kernel_passive,
                       kernel_active=bad, reward=arm.reward)
    messages = validate(broken)
    assert any(f"row {row % s + 1}" in m for m in messages)
