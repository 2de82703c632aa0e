import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from rcmlab import cluster as cl
from rcmlab import corrector as co
from rcmlab import environment as env
from rcmlab import walk as wk
from rcmlab.errors import SampleSizeError

from .conftest import bern, full_field


def two_vertex(w):
    return cl.Graph(2, [0], [1], [w], disp=[[1, 0]], coords=[[0, 0], [1, 0]])


def test_homogeneous_mean_square_displacement():
    g = cl.giant_component(full_field(2, 64))
    starts = np.zeros(100000, dtype=np.int64)
    disp, cens = wk.walk_endpoints(g, starts, 10.0, seed=31)
    assert not cens.any()
    msd = (disp.astype(float) ** 2).sum(axis=1).mean()
    assert msd == pytest.approx(40.0, rel=0.02)


def test_isolated_vertex_never_moves():
    f = env.ConductanceField(env.LatticeBox(2, 4), np.zeros((4, 4, 2)), 0, "iid")
    g = cl.components(f)[0]
    s = wk.simulate_vsrw(g, 0, 1e6, seed=1)
    assert s.n_jumps == 0 and s.horizon == 1e6


def test_two_vertex_holding_times():
    w = 2.5
    s = wk.simulate_vsrw(two_vertex(w), 0, 40000.0, seed=4)
    holds = s.holding_times()[:-1]
    assert len(holds) > 50000
    se = (1 / w) / np.sqrt(len(holds))
    assert abs(holds.mean() - 1 / w) < 4 * se
    assert set(s.vertices[1::2].tolist()) == {1}


def test_first_jump_law():
    w = np.ones((3, 3, 2))
    w[1, 1, 0], w[1, 1, 1], w[0, 1, 0], w[1, 0, 1] = 0.5, 1.0, 2.0, 3.5
    g = cl.giant_component(env.ConductanceField(env.LatticeBox(2, 3), w, 0, "iid"))
    x = g.local((1, 1))
    mu = g.mu()[x]
    nbrs, wts = g.neighbors(x), g.weights[g.indptr[x]:g.indptr[x + 1]]
    first_t, first_v = [], []
    for i in range(100000):
        s = wk.simulate_vsrw(g, x, 40.0 / mu, seed=9, index=i)
        first_t.append(s.times[0])
        first_v.append(s.vertices[1])
    assert stats.kstest(first_t, "expon", args=(0, 1 / mu)).pvalue > 0.001
    counts = np.array([np.sum(np.asarray(first_v) == v) for v in nbrs])
    assert counts.sum() == 100000
    assert stats.chisquare(counts, 100000 * wts / mu).pvalue > 0.001


def test_detailed_balance_counts():
    g = cl.giant_component(bern(2, 12, 0.75, 3))
    s = wk.simulate_vsrw(g, 0, 200000.0, seed=5)
    a, b = s.vertices[:-1], s.vertices[1:]
    n = g.n
    flow = np.bincount(a * n + b, minlength=n * n).reshape(n, n)
    eu, ev, _ = g.edges
    tot = flow[eu, ev] + flow[ev, eu]
    diff = np.abs(flow[eu, ev] - flow[ev, eu])
    assert tot.min() > 100
    assert np.mean(diff > 3 * np.sqrt(tot)) <= 0.01


def test_time_change_homogeneous():
    g = cl.giant_component(full_field(2, 32))
    s = wk.simulate_vsrw(g, 0, 100.0, seed=2)
    assert wk.additive_functional(s, g, 37.5) == pytest.approx(4 * 37.5)
    y = wk.time_change_csrw(s, g)
    assert y.horizon == pytest.approx(400.0)
    np.testing.assert_allclose(y.times, 4 * s.times)


def test_csrw_holding_mean():
    g = cl.giant_component(env.generate_iid(env.LatticeBox(2, 64), env.MarginalSpec.uniform(), 6))
    s = wk.simulate_vsrw(g, 0, 60000.0, seed=8)
    holds = np.diff(np.r_[0.0, wk.time_change_csrw(s, g).times])
    assert len(holds) >= 100000
    assert holds.mean() == pytest.approx(1.0, rel=0.01)


def test_additive_functional_rate():
    f = env.generate_iid(env.LatticeBox(2, 128), env.MarginalSpec.uniform(), 12)
    g = cl.giant_component(f)
    spatial = g.mu().mean()
    t = 5000.0
    rates = [wk.additive_functional(wk.simulate_vsrw(g, int(x), t, seed=1, index=i), g, t) / t
             for i, x in enumerate(np.random.default_rng(0).integers(0, g.n, 20))]
    assert np.mean(rates) == pytest.approx(spatial, rel=0.03)
    assert spatial == pytest.approx(2.0, rel=0.03)


@given(st.integers(0, 10 ** 6))
def test_time_change_roundtrip(seed):
    g = cl.giant_component(bern(2, 10, 0.8, seed % 50))
    s = wk.simulate_vsrw(g, 0, 30.0, seed=seed)
    back = wk.time_change_vsrw(wk.time_change_csrw(s, g), g)
    np.testing.assert_array_equal(back.vertices, s.vertices)
    np.testing.assert_allclose(back.times, s.times, rtol=1e-12, atol=1e-12)
    assert back.horizon == pytest.approx(s.horizon, rel=1e-12)
    a = wk.inverse_additive(s, g, wk.additive_functional(s, g, np.array([1.0, 7.0, 20.0])))
    np.testing.assert_allclose(a, [1.0, 7.0, 20.0], rtol=1e-12)


def test_martingale_equals_position_when_homogeneous():
    g = cl.giant_component(full_field(2, 32))
    c = co.solve_corrector(g, "periodic")
    s = wk.simulate_vsrw(g, 5, 50.0, seed=3)
    np.testing.assert_array_equal(wk.martingale_part(s, c), s.positions)
    assert wk.quad_variation(s, c, [0.0, 0.0]) == 0.0


def test_quadratic_variation_rate():
    g = cl.giant_component(bern(2, 64, 0.7, 21))
    c = co.solve_corrector(g, "periodic")
    sig = co.sigma_estimate(g, c).matrix
    v = np.array([0.6, 0.8])
    t = 20.0
    rng = np.random.default_rng(1)
    qv = [wk.quad_variation(wk.simulate_vsrw(g, int(x), t, seed=2, index=i), c, v) / t
          for i, x in enumerate(rng.integers(0, g.n, 10000))]
    assert np.mean(qv) == pytest.approx(v @ sig @ v, rel=0.05)


def test_martingale_mean_constant():
    g = cl.giant_component(bern(2, 64, 0.7, 22))
    c = co.solve_corrector(g, "periodic")
    rng = np.random.default_rng(2)
    times = [2.0, 8.0, 20.0]
    vals = np.zeros((4000, len(times), 2))
    for i, x in enumerate(rng.integers(0, g.n, 4000)):
        s = wk.simulate_vsrw(g, int(x), times[-1], seed=3, index=i)
        m = wk.martingale_part(s, c)
        for k, t in enumerate(times):
            vals[i, k] = m[np.searchsorted(s.times, t, side="right")]
    mean = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / np.sqrt(len(vals))
    assert np.all(np.abs(mean) <= 3.5 * se)


def test_seeded_streams():
    g = cl.giant_component(bern(2, 16, 0.8, 1))
    a = wk.simulate_vsrw(g, 0, 20.0, seed=7, index=3)
    b = wk.simulate_vsrw(g, 0, 20.0, seed=7, index=3)
    c = wk.simulate_vsrw(g, 0, 20.0, seed=7, index=4)
    assert np.array_equal(a.times, b.times) and np.array_equal(a.vertices, b.vertices)
    assert not np.array_equal(a.times[:5], c.times[:5])
    disp, _ = wk.walk_endpoints(g, [0, 0], 20.0, seed=7, first_index=3)
    assert np.array_equal(disp[0], a.positions[-1])
    assert np.array_equal(disp[1], c.positions[-1])


def test_censoring_open_box():
    g = cl.giant_component(full_field(2, 32, "open"))
    s = wk.simulate_vsrw(g, g.local((16, 16)), 1e5, seed=1)
    assert s.censored and s.horizon < 1e5
    assert wk.censor_mask(g)[s.vertices[-1]]
    c = co.solve_corrector(g, "dirichlet")
    with pytest.raises(SampleSizeError):
        wk.qfclt_test(g, c, [16], 200, 1.0, seed=1)


def test_trajectory_log_roundtrip(tmp_path):
    g = cl.giant_component(bern(2, 16, 0.8, 4))
    paths = [wk.simulate_vsrw(g, 0, 5.0, seed=1, index=i) for i in range(3)]
    wk.write_trajectory_log(paths, tmp_path / "t.log", g)
    back = wk.read_trajectory_log(tmp_path / "t.log")
    for s, (t, v) in zip(paths, back):
        np.testing.assert_array_equal(t[1:], s.times)
        np.testing.assert_array_equal(v, g.vertex_ids[s.vertices])


def test_line_cluster_has_no_transverse_spread():
    w = np.zeros((32, 32, 2))
    w[:, 5, 0] = 1.0
    g = cl.giant_component(env.ConductanceField(env.LatticeBox(2, 32), w, 0, "iid"))
    c = co.solve_corrector(g, "periodic")
    rep = wk.qfclt_test(g, c, [4], 2000, 1.0, seed=3)
    assert rep.covariance[4][1, 1] == pytest.approx(1 / (12 * 16), rel=0.15)
    assert rep.reference[1, 1] == 0.0


def test_percolation_covariance_positive_definite():
    g = cl.giant_component(bern(2, 96, 0.7, 14))
    c = co.solve_corrector(g, "periodic")
    rep = wk.qfclt_test(g, c, [8], 4000, 1.0, seed=5)
    cov = rep.covariance[8]
    lam = np.linalg.eigvalsh(cov).min()
    se = np.sqrt(2.0 / 4000) * np.linalg.eigvalsh(cov).max()
    assert lam > 3 * se
