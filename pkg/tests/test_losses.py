import math

import numpy as np
import pytest

from avcl.errors import ConfigError, ContractError, DegenerateInputError
from avcl.losses import (LossConfig, cgra_loss, cross_correlation, selfcl_loss_a,
                         selfcl_loss_v, selfcl_total, total_loss)
from avcl.tensor import Tensor, grad_check
from oracles import (CGRA_WORKED_VALUE, SELFCL_N2_PER_MODALITY, scalar_cgra,
                     scalar_cross_correlation, scalar_selfcl_one_way, scalar_total_loss)


def rand_features(rng, n, d, margin=0.1):
    x = rng.uniform(margin, 1.0, size=(n, d)) * rng.choice([-1.0, 1.0], size=(n, d))
    return Tensor(x)


# -------------------------------------------------------- cross-correlation

def test_self_correlation_of_orthonormal_columns_is_identity():
    f = Tensor(np.eye(3))
    c = cross_correlation(f, Tensor(np.eye(3))).values.data
    np.testing.assert_allclose(c, np.eye(3), atol=1e-12)


def test_anti_correlation_gives_minus_identity():
    f = Tensor(np.eye(2))
    c = cross_correlation(f, Tensor(-np.eye(2))).values.data
    np.testing.assert_allclose(c, -np.eye(2), atol=1e-12)


def test_worked_correlation_matrix():
    f_v = Tensor([[1.0, 0.0], [0.0, 1.0]])
    f_a = Tensor([[1.0, 1.0], [0.0, 1.0]])
    c = cross_correlation(f_v, f_a).values.data
    s = 1.0 / math.sqrt(2.0)
    np.testing.assert_allclose(c, [[1.0, s], [0.0, s]], atol=1e-12)
    # against the scalar brute-force implementation
    expected = scalar_cross_correlation(f_v.data.tolist(), f_a.data.tolist())
    np.testing.assert_allclose(c, expected, atol=1e-12)


def test_zero_column_identified_by_index():
    f_v = Tensor([[1.0, 0.0], [2.0, 0.0]])
    with pytest.raises(DegenerateInputError, match="column 1"):
        cross_correlation(f_v, Tensor(np.ones((2, 2))))


def test_entries_within_cauchy_schwarz_bounds():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n, d = int(rng.integers(2, 9)), int(rng.integers(2, 9))
        c = cross_correlation(rand_features(rng, n, d), rand_features(rng, n, d))
        assert np.all(c.values.data >= -1.0 - 1e-9)
        assert np.all(c.values.data <= 1.0 + 1e-9)


def test_column_scale_invariance():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n, d = int(rng.integers(2, 7)), int(rng.integers(2, 7))
        f_v, f_a = rand_features(rng, n, d), rand_features(rng, n, d)
        scales = rng.uniform(0.1, 10.0, size=d)
        scaled = Tensor(f_v.data * scales)
        base = cross_correlation(f_v, f_a).values.data
        after = cross_correlation(scaled, f_a).values.data
        assert np.max(np.abs(base - after)) < 1e-9


def test_centered_variant_removes_column_means():
    rng = np.random.default_rng(2)
    f_v, f_a = rand_features(rng, 6, 4), rand_features(rng, 6, 4)
    shifted = Tensor(f_v.data + 7.0)
    base = cross_correlation(f_v, f_a, center=True).values.data
    after = cross_correlation(shifted, f_a, center=True).values.data
    np.testing.assert_allclose(base, after, atol=1e-9)


# --------------------------------------------------------------- cgra loss

def test_identity_is_the_minimizer():
    assert cgra_loss(Tensor(np.eye(4)), 0.005).item() == 0.0


def test_minus_identity_value():
    assert cgra_loss(Tensor(-np.eye(2)), 0.005).item() == pytest.approx(8.0, abs=1e-12)


def test_worked_cgra_value():
    s = 1.0 / math.sqrt(2.0)
    c = Tensor([[1.0, s], [0.0, s]])
    assert cgra_loss(c, 0.005).item() == pytest.approx(CGRA_WORKED_VALUE, abs=1e-12)


def test_nonnegative_and_zero_iff_identity():
    rng = np.random.default_rng(3)
    for _ in range(20):
        c = Tensor(rng.uniform(-1, 1, size=(5, 5)))
        val = cgra_loss(c, 0.005).item()
        assert val >= 0.0
        if np.max(np.abs(c.data - np.eye(5))) > 0:
            assert val > 0.0


def test_cgra_requires_square():
    with pytest.raises(ContractError):
        cgra_loss(Tensor(np.zeros((2, 3))), 0.005)


# ------------------------------------------------------------- contrastive

def test_single_sample_loss_is_zero():
    f = Tensor([[1.0, 2.0]])
    assert selfcl_loss_v(f, f, 0.5).item() == pytest.approx(0.0, abs=1e-12)
    assert selfcl_loss_a(f, f, 0.5).item() == pytest.approx(0.0, abs=1e-12)
    assert selfcl_total(f, f, 0.5).item() == pytest.approx(0.0, abs=1e-12)


def test_worked_n2_value():
    f = Tensor(np.eye(2))
    lv = selfcl_loss_v(f, Tensor(np.eye(2)), 1.0).item()
    la = selfcl_loss_a(f, Tensor(np.eye(2)), 1.0).item()
    assert lv == pytest.approx(SELFCL_N2_PER_MODALITY, abs=1e-10)
    assert la == pytest.approx(SELFCL_N2_PER_MODALITY, abs=1e-10)
    total = selfcl_total(f, Tensor(np.eye(2)), 1.0).item()
    assert total == pytest.approx(2.0 * SELFCL_N2_PER_MODALITY, abs=1e-10)


def test_symmetric_inputs_make_both_directions_equal():
    rng = np.random.default_rng(4)
    f = rand_features(rng, 5, 3)
    same = Tensor(f.data.copy())
    assert selfcl_loss_v(f, same, 0.1).item() == pytest.approx(
        selfcl_loss_a(f, same, 0.1).item(), abs=1e-12)


def test_loss_decreases_as_positive_similarity_grows():
    # rotate the positive toward the anchor in a direction orthogonal to
    # everything else so no other pairwise similarity moves
    f_v = Tensor([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    losses = []
    for c in (0.1, 0.5, 0.9):
        f_a = Tensor([[c, 0.0, math.sqrt(1 - c * c)], [0.0, 1.0, 0.0]])
        losses.append(selfcl_loss_v(f_v, f_a, 0.5).item())
    assert losses[0] > losses[1] > losses[2]


def test_zero_row_identified_by_index():
    f_v = Tensor([[1.0, 1.0], [0.0, 0.0]])
    with pytest.raises(DegenerateInputError, match="row 1"):
        selfcl_loss_v(f_v, Tensor(np.ones((2, 2))))


def test_row_scale_invariance():
    rng = np.random.default_rng(5)
    for _ in range(50):
        n, d = int(rng.integers(2, 7)), int(rng.integers(2, 7))
        f_v, f_a = rand_features(rng, n, d), rand_features(rng, n, d)
        scales = rng.uniform(0.1, 10.0, size=(n, 1))
        base = selfcl_total(f_v, f_a, 0.1).item()
        after = selfcl_total(Tensor(f_v.data * scales), f_a, 0.1).item()
        assert abs(base - after) < 1e-9 * max(1.0, abs(base))


def test_permutation_equivariance():
    rng = np.random.default_rng(6)
    for _ in range(50):
        n, d = int(rng.integers(2, 7)), int(rng.integers(2, 7))
        f_v, f_a = rand_features(rng, n, d), rand_features(rng, n, d)
        perm = rng.permutation(n)
        cfg = LossConfig()
        base = total_loss(f_v, f_a, cfg).item()
        after = total_loss(Tensor(f_v.data[perm]), Tensor(f_a.data[perm]), cfg).item()
        assert abs(base - after) < 1e-9 * max(1.0, abs(base))


# ------------------------------------------------------------------- total

def test_total_decomposes_when_correlation_is_perfect():
    f = Tensor(np.eye(4))
    same = Tensor(np.eye(4))
    cfg = LossConfig()
    expected = cfg.lambda_self * selfcl_total(f, same, cfg.tau).item()
    assert total_loss(f, same, cfg).item() == pytest.approx(expected, abs=1e-12)


def test_total_matches_scalar_oracle():
    rng = np.random.default_rng(7)
    cfg = LossConfig()
    f_v, f_a = rand_features(rng, 4, 6), rand_features(rng, 4, 6)
    ours = total_loss(f_v, f_a, cfg).item()
    ref = scalar_total_loss(f_v.data.tolist(), f_a.data.tolist(),
                            cfg.lambda_offdiag, cfg.lambda_cor, cfg.lambda_self, cfg.tau)
    assert ours == pytest.approx(ref, abs=1e-10)


def test_loss_config_rejects_nonpositive_fields():
    with pytest.raises(ConfigError):
        LossConfig(tau=0.0)
    with pytest.raises(ConfigError):
        LossConfig(lambda_cor=-0.1)


# --------------------------------------------------------------- gradients

def test_loss_gradients_pass_finite_differences():
    rng = np.random.default_rng(8)
    f_v, f_a = rand_features(rng, 4, 6), rand_features(rng, 4, 6)
    checks = [
        lambda t: cgra_loss(cross_correlation(t, f_a), 0.005),
        lambda t: selfcl_loss_v(t, f_a, 0.1),
        lambda t: selfcl_loss_a(t, f_v, 0.1),
        lambda t: selfcl_total(t, f_a, 0.1),
        lambda t: total_loss(t, f_a, LossConfig()),
    ]
    for f in checks:
        assert grad_check(f, f_v) < 1e-4
