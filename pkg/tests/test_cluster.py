import numpy as np
import pytest
from hypothesis import given, strategies as st

from rcmlab import cluster as cl
from rcmlab import environment as env
from rcmlab.errors import ContainmentError, DomainError, MembershipError

from . import oracles
from .conftest import bern, full_field


def _weights_strategy(max_side=12):
    return st.tuples(st.integers(1, max_side), st.integers(1, max_side), st.integers(0, 2 ** 32),
                     st.floats(0.0, 1.0), st.sampled_from(["open", "periodic"]))


@given(_weights_strategy())
def test_components_match_dfs(params):
    a, b, seed, p, boundary = params
    f = env.generate_iid(env.LatticeBox(2, (a, b), boundary), env.MarginalSpec.bernoulli(max(p, 1e-9)), seed)
    ours = [tuple(c.vertex_ids.tolist()) for c in cl.components(f)]
    assert ours == oracles.dfs_components(np.asarray(f.weights), f.box.periodic)


def test_components_full_and_empty():
    assert [len(c) for c in cl.components(full_field(2, 8))] == [64]
    f = env.ConductanceField(env.LatticeBox(2, 8), np.zeros((8, 8, 2)), 0, "iid")
    comps = cl.components(f)
    assert len(comps) == 64 and all(len(c) == 1 for c in comps)
    assert list(cl.component_sizes(f)) == [1] * 64


def test_giant_occupies_majority():
    hits = sum(len(cl.giant_component(bern(2, 64, 0.7, s))) > 0.5 * 64 * 64 for s in range(100))
    assert hits >= 95


def test_giant_agrees_with_components():
    for s in range(10):
        f = bern(2, 10, 0.5, s)
        assert np.array_equal(cl.giant_component(f).vertex_ids, cl.components(f)[0].vertex_ids)


def test_ball_counts_full_lattice():
    g = cl.giant_component(full_field(2, 32))
    x = g.local((16, 16))
    assert [len(cl.ball(g, x, r)) for r in (0, 1, 2, 2.7, 5)] == [1, 5, 13, 13, 61]
    assert list(cl.ball_sizes(g, x, [0, 1, 2, 3])) == [1, 5, 13, 25]
    for r in range(6):
        assert cl.l1_ball_size(2, r) == oracles.l1_ball_count(2, r)
        assert cl.l1_ball_size(3, r) == oracles.l1_ball_count(3, r)


def test_ball_errors():
    g = cl.giant_component(full_field(2, 8))
    with pytest.raises(DomainError):
        cl.ball(g, 0, -1)
    with pytest.raises(MembershipError):
        cl.ball(g, 10 ** 6, 1)


def test_local_lookup():
    f = bern(2, 16, 0.6, 2, "open")
    g = cl.giant_component(f)
    v = 5
    assert g.local(tuple(g.coords[v])) == v
    missing = np.setdiff1d(np.arange(f.box.n_vertices), g.vertex_ids)
    if len(missing):
        with pytest.raises(MembershipError):
            g.local(tuple(f.box.coords(missing[0])))
    with pytest.raises(MembershipError):
        g.local((16, 0))


@given(st.integers(0, 500))
def test_chemical_distance_properties(seed):
    f = bern(2, 12, 0.7, seed, "open")
    g = cl.giant_component(f)
    rng = np.random.default_rng(seed)
    x, y, z = rng.integers(0, g.n, 3)
    dx, dy = g.distances(x), g.distances(y)
    assert dx[y] == dy[x]
    assert dx[z] <= dx[y] + dy[z]
    l1 = np.abs(g.coords - g.coords[x]).sum(axis=1)
    assert np.all(dx >= l1)


@given(st.integers(0, 500), st.integers(0, 6), st.integers(0, 6))
def test_ball_monotone(seed, r1, r2):
    g = cl.giant_component(bern(2, 14, 0.65, seed))
    lo, hi = sorted((r1, r2))
    x = int(np.random.default_rng(seed).integers(g.n))
    assert set(cl.ball(g, x, lo).vertices) <= set(cl.ball(g, x, hi).vertices)


def test_relative_boundary_examples():
    g = cl.giant_component(full_field(2, 16))
    A = cl.ball(g, g.local((8, 8)), 2).vertices
    assert len(cl.relative_boundary(g, A, A)) == 0
    assert len(cl.relative_boundary(g, [g.local((8, 8))])) == 4
    box4 = cl.giant_component(full_field(2, 4, "open"))
    left = [box4.local((i, j)) for i in range(2) for j in range(4)]
    assert len(cl.relative_boundary(box4, left, np.arange(16))) == 4
    with pytest.raises(ContainmentError):
        cl.relative_boundary(g, A, [A[0]])


def test_local_measures_homogeneous():
    g = cl.giant_component(full_field(2, 8))
    lm = cl.local_measures(g)
    assert np.all(lm.mu == 4) and np.all(lm.nu == 4)


def test_local_measures_zero_convention():
    f = env.ConductanceField(env.LatticeBox(2, 4, "open"), np.zeros((4, 4, 2)), 0, "iid")
    g = cl.components(f)[0]
    lm = cl.local_measures(g)
    assert lm.mu[0] == 0 and lm.nu[0] == 0


@given(st.floats(-5, 5), st.sampled_from([1.0, 1.5, 2.0, 7.0, np.inf]), st.integers(1, 20))
def test_averaged_norm_constant(c, p, k):
    assert cl.averaged_norm(np.full(30, c), np.arange(k), p) == pytest.approx(abs(c))


def test_averaged_norm_empty():
    with pytest.raises(DomainError):
        cl.averaged_norm(np.ones(3), [], 1.0)


def test_mu_average_uniform_weights():
    f = env.generate_iid(env.LatticeBox(2, 128), env.MarginalSpec.uniform(), 99)
    g = cl.giant_component(f)
    x = g.local((64, 64))
    lm = cl.local_measures(g)
    vals = [cl.averaged_norm(lm.mu, cl.ball(g, x, n).vertices, 1.0) for n in (8, 16, 32, 48)]
    assert vals[-1] == pytest.approx(2.0, rel=0.03)
    assert abs(vals[-1] - 2.0) <= abs(vals[0] - 2.0) + 0.02


def test_margins_and_center():
    g = cl.giant_component(full_field(2, 16, "open"))
    m = cl.interior_mask(g, 2)
    assert m.sum() == 12 * 12
    assert tuple(g.coords[cl.center_vertex(g)]) == (7, 7)
    t = cl.giant_component(full_field(2, 16))
    assert cl.interior_mask(t, 3).all()
    rel = cl.relative_positions(t, t.local((0, 0)))
    assert np.abs(rel).max() == 8


def test_subgraph_preserves_displacement():
    g = cl.giant_component(full_field(2, 6))
    sub, verts = g.subgraph(cl.ball(g, 0, 2).vertices)
    assert sub.n == 13 and sub.n_edges == 16
    assert np.all(np.abs(sub.disp).sum(axis=1) == 1)
    assert g.is_connected(verts)
