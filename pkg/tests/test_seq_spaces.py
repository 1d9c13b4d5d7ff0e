import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from infbond.claims import remark_coefficients
from infbond.errors import DomainError, InvalidInputError
from infbond.seq_spaces import (J_WEIGHT, BRACKET, WeightSpec, apply_j_inverse_power, apply_j_power,
                                truncation_sweep, weight_matrix, weighted_norm, weighted_partial_sums)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
vectors = arrays(np.float64, st.integers(1, 40), elements=finite)
exponents = st.floats(0.0, 4.0)


def test_unit_vector_bracket_weight():
    assert weighted_norm([1.0, 0.0, 0.0], WeightSpec(1.0)) == pytest.approx(np.sqrt(2.0), rel=1e-15)


def test_zero_vector_has_zero_norm():
    assert weighted_norm(np.zeros(5), WeightSpec(2.0)) == 0.0


def test_s_zero_is_euclidean(rng):
    x = rng.normal(size=30)
    assert weighted_norm(x, 0.0) == pytest.approx(np.linalg.norm(x), rel=1e-14)


def test_non_finite_rejected():
    with pytest.raises(InvalidInputError):
        weighted_norm([1.0, np.nan])
    with pytest.raises(InvalidInputError):
        weighted_norm([])


def test_negative_exponent_rejected():
    with pytest.raises(DomainError):
        WeightSpec(-0.5)
    with pytest.raises(DomainError):
        apply_j_power([1.0], -1.0)


def test_unknown_convention_rejected():
    with pytest.raises(InvalidInputError):
        WeightSpec(1.0, "fourier")


def test_j_power_examples(rng):
    x = np.zeros(5)
    x[2] = 1.0
    np.testing.assert_array_equal(apply_j_power(x, 2.0), 9.0 * x)
    y = rng.normal(size=12)
    np.testing.assert_array_equal(apply_j_power(y, 0.0), y)
    np.testing.assert_allclose(apply_j_power(apply_j_power(y, 0.3), 0.7), apply_j_power(y, 1.0), rtol=1e-12)
    np.testing.assert_allclose(apply_j_inverse_power(apply_j_power(y, 1.5), 1.5), y, rtol=1e-13)


def test_weight_matrix_examples():
    np.testing.assert_array_equal(weight_matrix(WeightSpec(0.0), 4), np.eye(4))
    np.testing.assert_allclose(weight_matrix(WeightSpec(1.0), 2), np.diag([np.sqrt(2), np.sqrt(5)]), rtol=1e-15)
    with pytest.raises(InvalidInputError):
        weight_matrix(1.0, 0)


@pytest.mark.parametrize("s", [0.0, 0.5, 1.0, 3.0])
def test_convention_ratio_bounds(s):
    i = 200
    r = WeightSpec(s, BRACKET).weights(i) / WeightSpec(s, J_WEIGHT).weights(i)
    assert np.all(r >= 1.0 - 1e-15)
    assert np.all(r <= 2 ** (s / 2) * (1 + 1e-15))


def test_weight_matrix_monotone_and_positive():
    d = np.diag(weight_matrix(WeightSpec(2.5, J_WEIGHT), 50))
    assert np.all(d > 0) and np.all(np.diff(d) >= 0)


def test_truncation_sweep():
    assert truncation_sweep(64, 16) == [16, 32, 64]
    assert truncation_sweep(48, 16) == [16, 32, 48]
    assert truncation_sweep(1) == [1]


def test_partial_sums_match_norm(rng):
    x = rng.normal(size=20)
    ps = weighted_partial_sums(x, WeightSpec(1.0))
    assert ps[-1] == pytest.approx(weighted_norm(x, WeightSpec(1.0)) ** 2, rel=1e-13)
    assert np.all(np.diff(ps) >= 0)


def test_slowly_varying_sequence_partial_sums():
    # direct summation oracle for c_i = ((1+i)^{1/2} ln(1+i))^{-1}
    c = remark_coefficients(2 ** 14)
    i = np.arange(1, 2 ** 14 + 1)
    oracle0 = np.cumsum(1.0 / ((1.0 + i) * np.log1p(i) ** 2))
    ps0 = weighted_partial_sums(c, 0.0)
    np.testing.assert_allclose(ps0, oracle0, rtol=1e-12)
    ps1 = weighted_partial_sums(c, WeightSpec(0.1))
    # the weighted partial sums keep increasing at every doubling
    levels = [2 ** k for k in range(10, 15)]
    vals = [ps1[n - 1] for n in levels]
    assert all(b > a for a, b in zip(vals, vals[1:]))


@settings(max_examples=60, deadline=None)
@given(vectors, exponents, exponents)
def test_norm_monotone_in_s(x, s1, s2):
    lo, hi = sorted((s1, s2))
    assert weighted_norm(x, WeightSpec(lo)) <= weighted_norm(x, WeightSpec(hi)) * (1 + 1e-12) + 1e-300


@settings(max_examples=60, deadline=None)
@given(vectors, exponents)
def test_convention_equivalence(x, s):
    nj = weighted_norm(x, WeightSpec(s, J_WEIGHT))
    npp = weighted_norm(x, WeightSpec(s, BRACKET))
    assert nj <= npp * (1 + 1e-12) + 1e-300
    assert npp <= 2 ** (s / 2) * nj * (1 + 1e-12) + 1e-300


@settings(max_examples=60, deadline=None)
@given(vectors, vectors, exponents, finite)
def test_j_power_linear_and_truncation_commutes(x, y, a, c):
    n = min(x.size, y.size)
    x, y = x[:n], y[:n]
    np.testing.assert_allclose(apply_j_power(c * x + y, a), c * apply_j_power(x, a) + apply_j_power(y, a),
                               rtol=1e-9, atol=1e-9 * (1 + abs(c)) * n ** a * 1e3)
    m = max(1, n // 2)
    np.testing.assert_array_equal(apply_j_power(x, a)[:m], apply_j_power(x[:m], a))
