import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lazydual.topology import (
    GossipMatrix,
    Graph,
    TopologyError,
    accelerated_gossip,
    apply_pk,
    build_graph,
    chebyshev_plan,
    complete,
    erdos_renyi,
    grid2d,
    max_degree_weights,
    metropolis_weights,
    path,
    pk_gossip,
    pk_matrix,
    read_edge_list,
    spectrum,
    with_rounds,
)


@pytest.mark.parametrize(("graph", "n", "edges"), [
    (grid2d(5, 5), 25, 40),
    (path(2), 2, 1),
    (complete(3), 3, 3),
    (grid2d(1, 4), 4, 3),
])
def test_graph_sizes(graph, n, edges):
    assert graph.n == n
    assert graph.num_edges == edges
    assert graph.degrees.sum() == 2 * edges


def test_neighbors_include_self():
    g = path(3)
    assert g.neighbors(1) == (0, 1, 2)
    assert g.neighbors(0) == (0, 1)


@pytest.mark.parametrize("edges", [[(0, 0)], [(0, 1), (1, 0)], [(0, 5)]])
def test_invalid_edges_rejected(edges):
    with pytest.raises(TopologyError):
        Graph.from_edges(3, edges)


def test_disconnected_rejected():
    with pytest.raises(TopologyError, match="not connected"):
        Graph.from_edges(4, [(0, 1), (2, 3)])


def test_build_graph_dispatch_and_errors():
    assert build_graph("grid2d", rows=2, cols=3).n == 6
    assert build_graph("complete", n=4).num_edges == 6
    with pytest.raises(TopologyError, match="unknown"):
        build_graph("torus", n=4)
    with pytest.raises(TopologyError, match="needs parameter"):
        build_graph("path")


def test_erdos_renyi_deterministic_and_connected():
    a = erdos_renyi(12, 0.3, seed=5)
    b = erdos_renyi(12, 0.3, seed=5)
    assert a.edges == b.edges
    assert a.is_connected()


def test_erdos_renyi_gives_up():
    with pytest.raises(TopologyError, match="no connected"):
        erdos_renyi(30, 0.0, seed=0, max_tries=3)


def test_edge_list_roundtrip(tmp_path):
    f = tmp_path / "g.txt"
    f.write_text("# ring\n0 1\n1 2\n2 3\n3 0  # closing edge\n")
    g = read_edge_list(f)
    assert g.n == 4 and g.num_edges == 4
    f.write_text("0 1 2\n")
    with pytest.raises(TopologyError, match="line 1"):
        read_edge_list(f)


def test_metropolis_path2():
    gm = metropolis_weights(path(2))
    np.testing.assert_allclose(gm.U, [[0.5, -0.5], [-0.5, 0.5]], atol=1e-15)
    assert gm.sigma1 == pytest.approx(1.0)
    assert gm.sigma_nm1 == pytest.approx(1.0)
    assert gm.zeta == pytest.approx(1.0)


def test_metropolis_path3():
    gm = metropolis_weights(path(3))
    lap = np.array([[1, -1, 0], [-1, 2, -1], [0, -1, 1]]) / 3
    np.testing.assert_allclose(gm.U, lap, atol=1e-15)
    np.testing.assert_allclose(np.linalg.eigvalsh(lap), [0, 1 / 3, 1], atol=1e-12)
    assert (gm.sigma1, gm.sigma_nm1, gm.zeta) == pytest.approx((1, 1 / 3, 1 / 3))


def test_max_degree_complete3():
    gm = max_degree_weights(complete(3))
    W = np.eye(3) - gm.U
    np.testing.assert_allclose(W, np.full((3, 3), 1 / 3), atol=1e-15)
    np.testing.assert_allclose(np.linalg.eigvalsh(gm.U), [0, 1, 1], atol=1e-12)


def test_max_degree_matches_metropolis_on_path2_and_weight_on_path3():
    np.testing.assert_array_equal(max_degree_weights(path(2)).U, metropolis_weights(path(2)).U)
    assert max_degree_weights(path(3)).U[0, 1] == pytest.approx(-1 / 3)


def test_spectrum_of_averaging_matrix():
    n = 6
    assert spectrum(np.eye(n) - np.ones((n, n)) / n)[2] == pytest.approx(1.0)


def test_spectrum_rejects_disconnected():
    U = np.zeros((4, 4))
    U[:2, :2] = [[0.5, -0.5], [-0.5, 0.5]]
    U[2:, 2:] = [[0.5, -0.5], [-0.5, 0.5]]
    with pytest.raises(TopologyError, match="disconnected or invalid"):
        spectrum(U)


GRAPHS = [path(2), path(3), path(10), grid2d(3, 4), grid2d(5, 5), complete(5), erdos_renyi(15, 0.25, 1)]


@pytest.mark.parametrize("g", GRAPHS)
@pytest.mark.parametrize("rule", [metropolis_weights, max_degree_weights])
def test_gossip_invariants(g, rule):
    gm = rule(g)
    U = gm.U
    assert np.abs(U - U.T).max() <= 1e-12
    assert np.linalg.eigvalsh(U).min() >= -1e-10
    assert np.abs(U @ np.ones(g.n)).max() <= 1e-12
    off = (np.abs(U) > 0) & ~np.eye(g.n, dtype=bool)
    allowed = np.zeros_like(off)
    for i, j in g.edges:
        allowed[i, j] = allowed[j, i] = True
    assert not np.any(off & ~allowed)
    assert 0 < gm.zeta <= 1
    assert gm.sqrtU_norm4 == pytest.approx(gm.sigma1**2)


def test_chebyshev_plan_constants_at_zeta_one_third():
    plan = chebyshev_plan(metropolis_weights(path(3)))
    assert plan.K == 1
    assert plan.c2 == pytest.approx(2.0)
    assert plan.c3 == pytest.approx(1.5)
    assert plan.c1 == pytest.approx((1 - np.sqrt(1 / 3)) / (1 + np.sqrt(1 / 3)))


def test_chebyshev_a_sequence():
    plan = with_rounds(chebyshev_plan(metropolis_weights(path(3))), 2)
    np.testing.assert_allclose(plan.a, [1, 2, 7])
    assert plan.aK == pytest.approx(7)


def test_round_count_quarter_gap():
    U = np.diag([0.0, 0.25, 1.0])
    gm = GossipMatrix(U, 1.0, 0.25, 0.25)
    assert chebyshev_plan(gm).K == 2


@pytest.mark.parametrize("g", GRAPHS[2:])
def test_a_sequence_increasing_and_c2_above_one(g):
    plan = chebyshev_plan(metropolis_weights(g))
    assert plan.K >= 1 and plan.c2 > 1
    assert np.all(np.diff(plan.a) > 0)


def test_bypass_on_unit_gap():
    gm = metropolis_weights(path(2))
    plan = chebyshev_plan(gm)
    assert plan.bypass and plan.K == 1
    np.testing.assert_array_equal(pk_matrix(plan, gm), gm.U)
    Z = np.array([[1.0, 3.0]])
    np.testing.assert_allclose(accelerated_gossip(Z, gm, plan), Z @ gm.U)


def test_k1_is_scaled_gossip():
    gm = metropolis_weights(path(3))
    plan = chebyshev_plan(gm)
    assert plan.K == 1
    # T_1(x) = x: P_1(U) = I - c2 (I - c3 U) / c2 = c3 U = (c2 c3 / a1) U
    np.testing.assert_allclose(pk_matrix(plan, gm), plan.c2 * plan.c3 / plan.aK * gm.U, atol=1e-14)


@pytest.mark.parametrize("g", [path(3), path(10), grid2d(4, 4)])
def test_consensus_columns_are_annihilated(g):
    gm = metropolis_weights(g)
    plan = chebyshev_plan(gm)
    Z = np.outer(np.arange(1.0, 4.0), np.ones(g.n))
    assert np.abs(apply_pk(Z, plan, gm)).max() <= 1e-12
    assert np.abs(accelerated_gossip(Z, gm, plan)).max() <= 1e-12


def test_recursion_matches_dense_polynomial():
    gm = metropolis_weights(path(3))
    plan = chebyshev_plan(gm)
    Z = np.random.default_rng(0).standard_normal((2, 3))
    ref = apply_pk(Z, plan, gm)
    assert np.abs(accelerated_gossip(Z, gm, plan) - ref).max() <= 1e-10 * np.abs(ref).max()


def test_zeta_of_pk_on_path10():
    gm = metropolis_weights(path(10))
    assert pk_gossip(gm, chebyshev_plan(gm)).zeta >= 0.25


def test_dimension_mismatch():
    gm = metropolis_weights(path(3))
    plan = chebyshev_plan(gm)
    with pytest.raises(ValueError):
        apply_pk(np.ones((2, 4)), plan, gm)
    with pytest.raises(ValueError):
        accelerated_gossip(np.ones((2, 3)), gm, plan, first_round_aggregate=np.ones((1, 3)))


@st.composite
def graphs(draw):
    kind = draw(st.sampled_from(["grid", "path", "er"]))
    if kind == "grid":
        return grid2d(draw(st.integers(2, 6)), draw(st.integers(2, 6)))
    if kind == "path":
        return path(draw(st.integers(3, 30)))
    return erdos_renyi(draw(st.integers(4, 30)), draw(st.floats(0.15, 0.6)), draw(st.integers(0, 1000)))


@settings(max_examples=40, deadline=None)
@given(g=graphs(), seed=st.integers(0, 2**31 - 1))
def test_property_chebyshev_equivalence_and_gap(g, seed):
    gm = metropolis_weights(g)
    plan = chebyshev_plan(gm)
    Z = np.random.default_rng(seed).standard_normal((3, g.n))
    ref = apply_pk(Z, plan, gm)
    out = accelerated_gossip(Z, gm, plan)
    assert np.linalg.norm(out - ref) <= 1e-10 * max(np.linalg.norm(ref), 1e-300)
    assert pk_gossip(gm, plan).zeta >= 0.25 * (1 - 1e-12)


@settings(max_examples=30, deadline=None)
@given(g=graphs(), seed=st.integers(0, 2**31 - 1))
def test_property_spectrum_invariant_under_relabeling(g, seed):
    perm = np.random.default_rng(seed).permutation(g.n)
    a = metropolis_weights(g)
    b = metropolis_weights(g.relabel(perm))
    assert (b.sigma1, b.sigma_nm1, b.zeta) == pytest.approx((a.sigma1, a.sigma_nm1, a.zeta), rel=1e-10)
