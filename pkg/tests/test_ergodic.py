import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rcmlab import environment as env
from rcmlab import ergodic as eg
from rcmlab.errors import ParameterError

from . import oracles
from .conftest import full_field


def uniform_field(L, seed):
    return env.generate_iid(env.LatticeBox(2, L), env.MarginalSpec.uniform(), seed)


def test_reference_integral():
    assert eg.reference_integral(2, 1.0) == pytest.approx(4.0, rel=1e-10)
    assert eg.reference_integral(2, 0.5) == pytest.approx(8.0, rel=1e-10)
    # Euclidean ball: 2 pi / eps
    assert eg.reference_integral(2, 1.0, "l2") == pytest.approx(2 * math.pi, rel=1e-10)
    assert eg.reference_integral(3, 1.0) == pytest.approx(3 * 8 / 6 / 1.0, rel=1e-10)


def test_constant_observable_is_exact_at_eps_one():
    f = full_field(2, 65)
    for n in (4, 16, 32):
        a = eg.weighted_average(f, "const", n, 1.0)
        assert a.value == pytest.approx(4.0, rel=1e-12)
    zero = eg.weighted_average(f, lambda fld: np.zeros(fld.box.side), 16, 1.0)
    assert zero.value == 0.0


def test_lattice_sum_at_half_eps():
    # the l1 lattice sum is 4 n^-eps sum_{j<=n} j^(eps-1), which approaches 2/eps slowly
    f = full_field(2, 129)
    n, eps = 64, 0.5
    exact = 4 * n ** -eps * np.sum(np.arange(1, n + 1) ** (eps - 1))
    assert eg.weighted_average(f, "const", n, eps).value == pytest.approx(exact, rel=1e-12)
    assert exact < eg.reference_integral(2, eps)


def test_matches_direct_loop():
    f = uniform_field(40, 3)
    vals = eg.observable_values(f, "edge")
    for n, eps in ((5, 1.0), (12, 0.5), (19, 1.7)):
        a = eg.weighted_average(f, "edge", n, eps).value
        assert a == pytest.approx(oracles.weighted_sum_direct(vals, n, eps), rel=1e-12)


def test_edge_average_half_eps_against_finite_n():
    n, eps = 64, 0.5
    const = eg.weighted_average(full_field(2, 129), "const", n, eps).value
    vals = [eg.weighted_average(uniform_field(129, s), "edge", n, eps).value for s in range(20)]
    se = np.std(vals, ddof=1) / np.sqrt(len(vals))
    assert abs(np.mean(vals) - 0.5 * const) <= 4 * se


def test_truncation_exact_beyond_max_weight():
    f = uniform_field(65, 1)
    n, eps = 32, 0.5
    kmax = n ** (2 - eps)
    gap = eg.truncation_gap(f, "edge", n, eps, kmax)
    assert gap.lhs == 0.0 and gap.holds
    assert eg.truncated_average(f, "edge", n, eps, kmax) == pytest.approx(
        eg.weighted_average(f, "edge", n, eps).value, rel=1e-14)


def test_truncation_constant_example():
    f = full_field(2, 129)
    gap = eg.truncation_gap(f, "const", 64, 1.0, 4)
    assert gap.C == 5.0
    assert gap.holds and gap.lhs > 0


def test_truncation_gap_monotone_in_k():
    f = uniform_field(97, 5)
    lhs = [eg.truncation_gap(f, "edge", 48, 0.7, k).lhs for k in (1, 2, 4, 8, 32, 128)]
    assert all(b <= a for a, b in zip(lhs, lhs[1:]))


@given(st.integers(0, 10 ** 6), st.sampled_from([1.0, 2.0, 10.0, 100.0]), st.floats(0.2, 1.8))
def test_truncation_never_violated(seed, k, eps):
    f = uniform_field(41, seed)
    obs = np.random.default_rng(seed).normal(size=f.box.side)
    assert eg.truncation_gap(f, obs, 20, eps, k).holds


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=60), st.floats(0.1, 1.9))
def test_abel_identity(s, eps):
    direct, abel = eg.abel_rearrangement(s, 2, eps)
    assert direct == pytest.approx(abel, rel=1e-9, abs=1e-9 * (1 + np.abs(s).sum()))


def test_shell_sums_const():
    s = eg.shell_sums(full_field(2, 33), "const", 16)
    np.testing.assert_array_equal(s, 4 * np.arange(1, 17))


def test_error_decreases_with_n():
    better = 0
    for seed in range(20):
        f = uniform_field(257, 100 + seed)
        err = [abs(eg.weighted_average(f, "edge", n, 1.0, mean=0.5).value - 2.0) for n in (8, 96)]
        better += err[1] < err[0]
    assert better >= 16


def test_ball_constant():
    assert eg.ball_constant(2) == 5.0
    assert eg.ball_constant(2, "l2") == 5.0


def test_rejects_small_or_open_box():
    with pytest.raises(ParameterError):
        eg.weighted_average(full_field(2, 20), "const", 10, 1.0)
    with pytest.raises(ParameterError):
        eg.weighted_average(full_field(2, 64, "open"), "const", 10, 1.0)
    with pytest.raises(ParameterError):
        eg.weighted_average(full_field(2, 64), "const", 10, 2.0)
