"""Tests for the cluster-tree engine: power-law algebra, ladders, profiles."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metastable.hierarchy import (
    Cluster,
    DomainTree,
    Edge,
    InternalConsistencyError,
    PowerLaw,
    TreeError,
    chain3_tree,
    chain_stationary,
    cluster_exit_stats,
    distribute,
    ladder_scales,
    make_cluster,
    metastable_profile,
    partition_cluster,
    powerlaw_sum,
    random_tree,
    rho_invariance_check,
    scale_ladder,
    singleton_exit_stats,
    star5_tree,
    two_domain_tree,
    window_index,
)


def uniform_chain3():
    """Worked 3-chain with every prefactor equal to 1."""
    return DomainTree(
        {"1": 1.0, "2": 1.0, "3": 1.0},
        [Edge("1", "2", Fraction(-1)), Edge("2", "3", Fraction(-2))],
    )


# ---------------------------------------------------------------------------
# PowerLaw algebra
# ---------------------------------------------------------------------------

finite_laws = st.builds(
    PowerLaw.of,
    st.floats(min_value=1e-6, max_value=1e6),
    st.fractions(min_value=-5, max_value=5, max_denominator=12),
)
laws = st.one_of(finite_laws, st.just(PowerLaw.zero()))


class TestPowerLaw:
    def test_mul_exact(self):
        a = PowerLaw.of(2.0, "-1")
        b = PowerLaw.of(3.0, "-1/2")
        assert a * b == PowerLaw.of(6.0, Fraction(-3, 2))

    def test_div_exact(self):
        a = PowerLaw.of(6.0, -3)
        b = PowerLaw.of(2.0, -1)
        assert a / b == PowerLaw.of(3.0, -2)

    def test_add_dominance(self):
        slow = PowerLaw.of(5.0, 0)
        fast = PowerLaw.of(1.0, -2)  # diverges as eps -> 0, dominates
        assert slow + fast == fast

    def test_add_tie_sums_coefficients(self):
        assert PowerLaw.of(1.0, -1) + PowerLaw.of(2.5, -1) == PowerLaw.of(3.5, -1)

    def test_zero_identity(self):
        z = PowerLaw.zero()
        a = PowerLaw.of(2.0, -1)
        assert z + a == a and a + z == a
        assert (z * a).is_zero
        assert (z / a).is_zero
        with pytest.raises(ZeroDivisionError):
            a / z

    def test_at(self):
        assert PowerLaw.of(2.0, -1).at(1e-3) == pytest.approx(2000.0)
        assert PowerLaw.zero().at(0.5) == 0.0

    def test_negative_coeff_rejected(self):
        with pytest.raises(ValueError):
            PowerLaw.of(-1.0, 0)

    @given(a=laws, b=laws)
    def test_mul_commutes(self, a, b):
        assert a * b == b * a

    @given(a=laws, b=laws, c=laws)
    @settings(max_examples=200)
    def test_mul_associative(self, a, b, c):
        x = (a * b) * c
        y = a * (b * c)
        if x.is_zero or y.is_zero:
            assert x.is_zero and y.is_zero
        else:
            assert x.expo == y.expo
            assert x.coeff == pytest.approx(y.coeff, rel=1e-12)

    @given(a=finite_laws, b=finite_laws)
    def test_add_keeps_dominant_exponent(self, a, b):
        assert (a + b).expo == min(a.expo, b.expo)


def test_powerlaw_sum():
    terms = [PowerLaw.of(1.0, 0), PowerLaw.of(2.0, -1), PowerLaw.of(3.0, -1)]
    assert powerlaw_sum(terms) == PowerLaw.of(5.0, -1)
    assert powerlaw_sum([]).is_zero


# ---------------------------------------------------------------------------
# tree validation
# ---------------------------------------------------------------------------

class TestDomainTree:
    def test_cycle_rejected(self):
        with pytest.raises(TreeError, match="must be a tree"):
            DomainTree({"a": 1, "b": 1, "c": 1},
                       [Edge("a", "b", Fraction(-1)),
                        Edge("b", "c", Fraction(-1)),
                        Edge("c", "a", Fraction(-1))])

    def test_disconnected_rejected(self):
        with pytest.raises(TreeError, match="must be a tree"):
            DomainTree({"a": 1, "b": 1, "c": 1, "d": 1},
                       [Edge("a", "b", Fraction(-1)),
                        Edge("a", "b", Fraction(-2)),
                        Edge("c", "d", Fraction(-1))])

    def test_nonnegative_gamma_rejected(self):
        with pytest.raises(TreeError, match="repelling"):
            DomainTree({"a": 1, "b": 1}, [Edge("a", "b", Fraction(1, 2))])

    def test_bad_prefactor_rejected(self):
        with pytest.raises(TreeError):
            DomainTree({"a": 0.0, "b": 1}, [Edge("a", "b", Fraction(-1))])


# ---------------------------------------------------------------------------
# ladders
# ---------------------------------------------------------------------------

class TestScaleLadder:
    def test_single_edge(self):
        ladder = scale_ladder(two_domain_tree(), "1")
        assert [c.members for c in ladder] == [frozenset({"1"}), frozenset({"1", "2"})]
        assert ladder_scales(ladder) == [0, Fraction(-1), None]

    def test_chain_from_k1(self):
        ladder = scale_ladder(uniform_chain3(), "1")
        assert [set(c.members) for c in ladder] == [{"1"}, {"1", "2"}, {"1", "2", "3"}]
        assert ladder_scales(ladder) == [0, Fraction(-1), Fraction(-2), None]

    def test_chain_from_k3_skips_window(self):
        ladder = scale_ladder(uniform_chain3(), "3")
        assert [set(c.members) for c in ladder] == [{"3"}, {"1", "2", "3"}]
        assert ladder_scales(ladder) == [0, Fraction(-2), None]

    def test_nesting_and_termination(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            tree = random_tree(rng)
            for i in tree.nodes:
                ladder = scale_ladder(tree, i)
                for a, b in zip(ladder, ladder[1:]):
                    assert a.members < b.members
                    assert b.scale is None or b.scale < a.scale
                assert ladder[-1].members == frozenset(tree.nodes)
                for c in ladder:
                    # every ladder entry satisfies the cluster invariants
                    assert make_cluster(tree, c.members) == c


# ---------------------------------------------------------------------------
# exit statistics
# ---------------------------------------------------------------------------

class TestSingletonStats:
    def test_leaf(self):
        stats = singleton_exit_stats(uniform_chain3(), "1")
        assert stats.theta == PowerLaw.of(1.0, -1)
        (law,) = stats.p.values()
        assert law == PowerLaw.of(1.0, 0)

    def test_star_center(self):
        # edges gamma = (-1, -1, -2) with C*rho = (2, 1, 5)
        tree = DomainTree(
            {"c": 1.0, "1": 1.0, "2": 1.0, "3": 1.0},
            [Edge("c", "1", Fraction(-1), c_uv=2.0),
             Edge("c", "2", Fraction(-1), c_uv=1.0),
             Edge("c", "3", Fraction(-2), c_uv=5.0)],
        )
        stats = singleton_exit_stats(tree, "c")
        by_target = {e.other("c"): law for e, law in stats.p.items()}
        assert by_target["1"] == PowerLaw.of(2 / 3, 0)
        assert by_target["2"] == PowerLaw.of(1 / 3, 0)
        assert by_target["3"] == PowerLaw.of(5 / 3, 1)
        assert stats.theta == PowerLaw.of(1 / 3, -1)

    def test_theta_exponent_is_max_adjacent_gamma(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            tree = random_tree(rng)
            for k in tree.nodes:
                if tree.adj[k]:
                    stats = singleton_exit_stats(tree, k)
                    assert stats.theta.expo == max(e.gamma for e in tree.adj[k])


class TestPartition:
    def test_two_vertex(self):
        tree = two_domain_tree()
        cluster = make_cluster(tree, frozenset({"1", "2"}))
        subs, chain = partition_cluster(tree, cluster)
        assert {frozenset(s.members) for s in subs} == {frozenset({"1"}), frozenset({"2"})}
        assert len(chain) == 1

    def test_chain(self):
        tree = uniform_chain3()
        cluster = make_cluster(tree, frozenset({"1", "2", "3"}))
        subs, chain = partition_cluster(tree, cluster)
        assert {frozenset(s.members) for s in subs} == {frozenset({"1", "2"}), frozenset({"3"})}
        assert len(chain) == 1 and chain[0].gamma == Fraction(-2)

    def test_uniform_star_all_singletons(self):
        tree = DomainTree(
            {"c": 1.0, "1": 1.0, "2": 1.0, "3": 1.0},
            [Edge("c", str(k), Fraction(-1)) for k in (1, 2, 3)],
        )
        cluster = make_cluster(tree, frozenset(tree.nodes))
        subs, chain = partition_cluster(tree, cluster)
        assert all(len(s) == 1 for s in subs)
        assert len(chain) == 3

    def test_singleton_rejected(self):
        tree = two_domain_tree()
        with pytest.raises(TreeError):
            partition_cluster(tree, Cluster(frozenset({"1"}), Fraction(-1)))


class TestChainStationary:
    def test_symmetric_pair(self):
        subs = [Cluster(frozenset({"a"}), Fraction(-1)), Cluster(frozenset({"b"}), Fraction(-1))]
        q = {(0, 1): PowerLaw.of(1.0, 0), (1, 0): PowerLaw.of(1.0, 0)}
        lam = chain_stationary(subs, q)
        assert lam == pytest.approx([0.5, 0.5])

    def test_star_return(self):
        # center 0 jumps to leaves with probs (q1,q2,q3); leaves return w.p. 1
        probs = (0.5, 0.3, 0.2)
        subs = [Cluster(frozenset({str(k)}), Fraction(-1)) for k in range(4)]
        q = {}
        for k, pk in enumerate(probs, start=1):
            q[(0, k)] = PowerLaw.of(pk, 0)
            q[(k, 0)] = PowerLaw.of(1.0, 0)
        lam = chain_stationary(subs, q)
        expected = np.array([1.0, *probs])
        expected /= expected.sum()
        assert lam == pytest.approx(expected)

    def test_matches_dense_eigenvector(self):
        rng = np.random.default_rng(2)
        # random reversible chain on a random tree quotient
        n = 5
        edges = [(k, int(rng.integers(0, k))) for k in range(1, n)]
        q = {}
        P = np.zeros((n, n))
        for (a, b) in edges:
            q[(a, b)] = PowerLaw.of(float(rng.uniform(0.1, 1.0)), 0)
            q[(b, a)] = PowerLaw.of(float(rng.uniform(0.1, 1.0)), 0)
        # normalize rows to build the comparison transition matrix
        rows = {k: sum(law.coeff for (s, _), law in q.items() if s == k) for k in range(n)}
        qn = {(s, u): PowerLaw.of(law.coeff / rows[s], 0) for (s, u), law in q.items()}
        for (s, u), law in qn.items():
            P[s, u] = law.coeff
        subs = [Cluster(frozenset({str(k)}), Fraction(-1)) for k in range(n)]
        lam = chain_stationary(subs, qn)
        w, v = np.linalg.eig(P.T)
        vec = np.real(v[:, np.argmin(np.abs(w - 1.0))])
        vec /= vec.sum()
        assert np.max(np.abs(lam - vec)) < 1e-12

    def test_nonzero_exponent_rejected(self):
        subs = [Cluster(frozenset({"a"}), Fraction(-1)), Cluster(frozenset({"b"}), Fraction(-1))]
        q = {(0, 1): PowerLaw.of(1.0, -1), (1, 0): PowerLaw.of(1.0, 0)}
        with pytest.raises(TreeError, match="exponent-0"):
            chain_stationary(subs, q)


class TestClusterExitStats:
    def test_worked_chain_inner_cluster(self):
        tree = uniform_chain3()
        cluster = make_cluster(tree, frozenset({"1", "2"}))
        stats = cluster_exit_stats(tree, cluster)
        # hand evaluation: lambda = (1/2, 1/2); theta = 2 eps^{-2}
        assert stats.theta.expo == Fraction(-2)
        assert stats.theta.coeff == pytest.approx(2.0)
        (law,) = stats.p.values()
        assert law.expo == 0 and law.coeff == pytest.approx(1.0)

    def test_exponent_postconditions_random(self):
        rng = np.random.default_rng(3)
        checked = 0
        for _ in range(60):
            tree = random_tree(rng)
            for i in tree.nodes:
                for c in scale_ladder(tree, i)[:-1]:
                    stats = cluster_exit_stats(tree, c)
                    assert stats.theta.expo == c.scale
                    for e, law in stats.p.items():
                        assert law.expo == -e.gamma + c.scale
                    checked += 1
        assert checked > 50

    def test_whole_tree_rejected(self):
        tree = uniform_chain3()
        with pytest.raises(TreeError, match="no exit"):
            cluster_exit_stats(tree, make_cluster(tree, frozenset(tree.nodes)))


class TestDistribute:
    def test_symmetric_pair(self):
        tree = DomainTree({"1": 1.0, "2": 1.0}, [Edge("1", "2", Fraction(-1))])
        w = distribute(tree, make_cluster(tree, frozenset({"1", "2"})))
        assert w["1"] == pytest.approx(0.5) and w["2"] == pytest.approx(0.5)

    def test_asymmetric_prefactors(self):
        tree = DomainTree({"1": 2.0, "2": 1.0}, [Edge("1", "2", Fraction(-1))])
        w = distribute(tree, make_cluster(tree, frozenset({"1", "2"})))
        assert w["1"] == pytest.approx(2 / 3) and w["2"] == pytest.approx(1 / 3)

    def test_sums_to_one_support_exact(self):
        rng = np.random.default_rng(4)
        for _ in range(40):
            tree = random_tree(rng)
            for i in tree.nodes:
                for c in scale_ladder(tree, i):
                    w = distribute(tree, c)
                    assert sum(w.values()) == pytest.approx(1.0, abs=1e-12)
                    assert set(w) == set(c.members)
                    assert all(v > 0 for v in w.values())


class TestMetastableProfile:
    def test_single_edge_symmetric(self):
        tree = DomainTree({"1": 1.0, "2": 1.0}, [Edge("1", "2", Fraction(-1))])
        prof = metastable_profile(tree, "1")
        assert prof.windows[0] == {"1": 1.0}
        assert prof.windows[1]["1"] == pytest.approx(0.5)

    def test_chain_from_k3_no_intermediate(self):
        prof = metastable_profile(uniform_chain3(), "3")
        assert prof.n_windows == 2
        assert prof.windows[0] == {"3": 1.0}

    def test_last_window_i_independent(self):
        for tree in (uniform_chain3(), chain3_tree(), star5_tree(), two_domain_tree()):
            finals = [metastable_profile(tree, i).windows[-1] for i in tree.nodes]
            for w in finals[1:]:
                for k in tree.nodes:
                    assert abs(w[k] - finals[0][k]) < 1e-12

    def test_random_trees_i_independent(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            tree = random_tree(rng)
            finals = [metastable_profile(tree, i).windows[-1] for i in tree.nodes]
            for w in finals[1:]:
                for k in tree.nodes:
                    assert abs(w[k] - finals[0][k]) < 1e-12


class TestWindowIndex:
    def test_interior(self):
        scales = [Fraction(0), Fraction(-1), None]
        assert window_index("-1/2", scales) == 1

    def test_second_window(self):
        scales = [Fraction(0), Fraction(-1), Fraction(-2), None]
        assert window_index("-3/2", scales) == 2
        assert window_index(-3, scales) == 3

    def test_critical_value_rejected(self):
        scales = [Fraction(0), Fraction(-1), Fraction(-2), None]
        with pytest.raises(ValueError, match="critical time scale"):
            window_index(-1, scales)

    def test_nonnegative_rejected(self):
        scales = [Fraction(0), Fraction(-1), None]
        with pytest.raises(ValueError):
            window_index(Fraction(1, 2), scales)


class TestRhoInvariance:
    def test_shipped_trees(self):
        for tree in (two_domain_tree(), chain3_tree(), star5_tree()):
            assert rho_invariance_check(tree, trials=20, seed=7) < 1e-12

    def test_prefactor_sensitivity_control(self):
        tree = chain3_tree()
        base = metastable_profile(tree, "1")
        bumped = metastable_profile(tree.with_node_prefactor("2", 20.0), "1")
        dev = max(abs(bumped.windows[-1][k] - base.windows[-1][k]) for k in tree.nodes)
        assert dev > 1e-3
