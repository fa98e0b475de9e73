"""Cluster-tree engine: power-law algebra, scale ladders, metastable profiles.

Everything in this module is deterministic and exact up to floating-point
prefactor arithmetic.  Edge exponents are carried as ``Fraction`` so that
ties between critical values are decided exactly, never by float rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

DETAILED_BALANCE_TOL = 1e-12
STATIONARITY_TOL = 1e-12
COEFF_SUM_TOL = 1e-9


class TreeError(ValueError):
    """Malformed tree input (cycles, non-positive prefactors, bad exponents)."""


class InternalConsistencyError(RuntimeError):
    """An exponent postcondition failed; indicates a bug or corrupted tree."""


# ---------------------------------------------------------------------------
# power-law algebra
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PowerLaw:
    """Leading-order quantity c * eps**e as eps -> 0.

    ``expo is None`` encodes the identically-zero element (the additive
    identity).  Smaller exponents dominate in sums since eps -> 0.
    """

    coeff: float
    expo: Optional[Fraction]

    def __post_init__(self) -> None:
        if self.expo is None:
            if self.coeff != 0.0:
                raise ValueError("zero sentinel must have coeff 0")
        else:
            if not self.coeff > 0.0:
                raise ValueError(f"PowerLaw coefficient must be positive, got {self.coeff}")

    @staticmethod
    def of(coeff: float, expo) -> "PowerLaw":
        return PowerLaw(float(coeff), Fraction(expo))

    @staticmethod
    def zero() -> "PowerLaw":
        return PowerLaw(0.0, None)

    @property
    def is_zero(self) -> bool:
        return self.expo is None

    def __mul__(self, other):
        if isinstance(other, PowerLaw):
            if self.is_zero or other.is_zero:
                return PowerLaw.zero()
            return PowerLaw(self.coeff * other.coeff, self.expo + other.expo)
        return self.scaled(other)

    __rmul__ = __mul__

    def scaled(self, factor: float) -> "PowerLaw":
        if self.is_zero:
            return self
        return PowerLaw(self.coeff * float(factor), self.expo)

    def __truediv__(self, other: "PowerLaw") -> "PowerLaw":
        if other.is_zero:
            raise ZeroDivisionError("division by the zero power law")
        if self.is_zero:
            return PowerLaw.zero()
        return PowerLaw(self.coeff / other.coeff, self.expo - other.expo)

    def __add__(self, other: "PowerLaw") -> "PowerLaw":
        if self.is_zero:
            return other
        if other.is_zero:
            return self
        if self.expo < other.expo:
            return self
        if other.expo < self.expo:
            return other
        return PowerLaw(self.coeff + other.coeff, self.expo)

    def at(self, eps: float) -> float:
        """Evaluate c * eps**e at a concrete eps > 0."""
        if self.is_zero:
            return 0.0
        return self.coeff * float(eps) ** float(self.expo)


def powerlaw_sum(terms: Sequence[PowerLaw]) -> PowerLaw:
    total = PowerLaw.zero()
    for t in terms:
        total = total + t
    return total


# ---------------------------------------------------------------------------
# domain tree
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Edge:
    """Surface between two adjacent domains.

    ``rho`` is a single value for both sides of the surface; ``c_uv`` is the
    directional prefactor used when exiting from ``u`` toward ``v``.
    """

    u: str
    v: str
    gamma: Fraction
    rho: float = 1.0
    c_uv: float = 1.0
    c_vu: float = 1.0

    def other(self, k: str) -> str:
        if k == self.u:
            return self.v
        if k == self.v:
            return self.u
        raise KeyError(f"node {k!r} not on edge ({self.u}, {self.v})")

    def c_from(self, k: str) -> float:
        if k == self.u:
            return self.c_uv
        if k == self.v:
            return self.c_vu
        raise KeyError(f"node {k!r} not on edge ({self.u}, {self.v})")


class DomainTree:
    """Domains K_i (vertices, prefactor C_i) and surfaces (edges).

    The adjacency graph of non-intersecting hypersurfaces is always a tree;
    this is validated, not assumed.
    """

    def __init__(self, node_prefactors: Dict[str, float], edges: Sequence[Edge]):
        nodes = tuple(node_prefactors)
        if len(nodes) == 0:
            raise TreeError("tree must have at least one node")
        for k, c in node_prefactors.items():
            if not c > 0:
                raise TreeError(f"node {k!r} has non-positive prefactor {c}")
        for e in edges:
            if e.u not in node_prefactors or e.v not in node_prefactors:
                raise TreeError(f"edge ({e.u}, {e.v}) references unknown node")
            if not e.gamma < 0:
                raise TreeError(f"edge ({e.u}, {e.v}) has gamma {e.gamma} >= 0; "
                                "only repelling surfaces are supported")
            if not (e.rho > 0 and e.c_uv > 0 and e.c_vu > 0):
                raise TreeError(f"edge ({e.u}, {e.v}) has non-positive prefactor")
        if len(edges) != len(nodes) - 1:
            raise TreeError("adjacency graph must be a tree "
                            f"(|E| = {len(edges)}, |V| = {len(nodes)})")
        adj: Dict[str, List[Edge]] = {k: [] for k in nodes}
        for e in edges:
            adj[e.u].append(e)
            adj[e.v].append(e)
        # connectivity
        if nodes:
            seen = {nodes[0]}
            stack = [nodes[0]]
            while stack:
                k = stack.pop()
                for e in adj[k]:
                    o = e.other(k)
                    if o not in seen:
                        seen.add(o)
                        stack.append(o)
            if len(seen) != len(nodes):
                raise TreeError("adjacency graph must be a tree (not connected)")
        self.node_prefactors = dict(node_prefactors)
        self.nodes: Tuple[str, ...] = nodes
        self.edges: Tuple[Edge, ...] = tuple(edges)
        self.adj: Dict[str, Tuple[Edge, ...]] = {k: tuple(v) for k, v in adj.items()}

    def prefactor(self, k: str) -> float:
        return self.node_prefactors[k]

    def with_rho_factors(self, factors: Sequence[float]) -> "DomainTree":
        """Same tree with every surface rho scaled by the per-edge factor."""
        if len(factors) != len(self.edges):
            raise ValueError("one factor per edge required")
        edges = [Edge(e.u, e.v, e.gamma, e.rho * float(f), e.c_uv, e.c_vu)
                 for e, f in zip(self.edges, factors)]
        return DomainTree(self.node_prefactors, edges)

    def with_node_prefactor(self, k: str, value: float) -> "DomainTree":
        prefs = dict(self.node_prefactors)
        prefs[k] = value
        return DomainTree(prefs, self.edges)


# ---------------------------------------------------------------------------
# clusters and ladders
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Cluster:
    """Connected subtree; ``scale`` is the defining exponent (None = -inf)."""

    members: FrozenSet[str]
    scale: Optional[Fraction]

    def __len__(self) -> int:
        return len(self.members)


def _scale_lt(a: Optional[Fraction], b: Optional[Fraction]) -> bool:
    """Compare scales, treating None as -infinity."""
    if a is None:
        return b is not None
    if b is None:
        return False
    return a < b


def boundary_edges(tree: DomainTree, members: FrozenSet[str]) -> List[Edge]:
    return [e for e in tree.edges if (e.u in members) != (e.v in members)]


def internal_edges(tree: DomainTree, members: FrozenSet[str]) -> List[Edge]:
    return [e for e in tree.edges if e.u in members and e.v in members]


def _component(tree: DomainTree, root: str, keep) -> FrozenSet[str]:
    seen = {root}
    stack = [root]
    while stack:
        k = stack.pop()
        for e in tree.adj[k]:
            if keep(e):
                o = e.other(k)
                if o not in seen:
                    seen.add(o)
                    stack.append(o)
    return frozenset(seen)


def make_cluster(tree: DomainTree, members: FrozenSet[str]) -> Cluster:
    """Build a cluster from a member set, validating its invariants."""
    members = frozenset(members)
    if not members:
        raise TreeError("cluster must be non-empty")
    root = next(iter(members))
    comp = _component(tree, root, lambda e: e.u in members and e.v in members)
    if comp != members:
        raise TreeError("cluster members must induce a connected subtree")
    bdry = boundary_edges(tree, members)
    if not bdry:
        return Cluster(members, None)
    scale = max(e.gamma for e in bdry)
    for e in internal_edges(tree, members):
        if not e.gamma > scale:
            raise TreeError("internal edge value must exceed the defining scale")
    return Cluster(members, scale)


def scale_ladder(tree: DomainTree, i: str) -> List[Cluster]:
    """Nested cluster sequence for start domain i, ending with the whole tree.

    Grows the current cluster by retaining the edges at or above its boundary
    maximum; the boundary maximum strictly decreases at every step, so the
    defining scales come out strictly decreasing.
    """
    if i not in tree.node_prefactors:
        raise KeyError(f"unknown start domain {i!r}")
    everything = frozenset(tree.nodes)
    clusters: List[Cluster] = []
    members = frozenset([i])
    while members != everything:
        gamma = max(e.gamma for e in boundary_edges(tree, members))
        clusters.append(Cluster(members, gamma))
        members = _component(tree, i, lambda e: e.gamma >= gamma)
    clusters.append(Cluster(everything, None))
    return clusters


def ladder_scales(clusters: Sequence[Cluster]) -> List[Optional[Fraction]]:
    """Xi(i): 0 followed by the defining scales (the last one is None=-inf)."""
    return [Fraction(0)] + [c.scale for c in clusters]


# ---------------------------------------------------------------------------
# exit statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExitStats:
    theta: PowerLaw
    p: Dict[Edge, PowerLaw]


def singleton_exit_stats(tree: DomainTree, k: str) -> ExitStats:
    """Leading-order mean exit time and exit-edge probabilities for one domain."""
    edges = tree.adj[k]
    if not edges:
        raise TreeError(f"domain {k!r} has no adjacent surface")
    gamma_star = max(e.gamma for e in edges)
    dominant = [e for e in edges if e.gamma == gamma_star]
    denom = sum(e.c_from(k) * e.rho for e in dominant)
    theta = PowerLaw(tree.prefactor(k) / denom, gamma_star)
    p = {e: PowerLaw(e.c_from(k) * e.rho / denom, -e.gamma + gamma_star)
         for e in edges}
    return ExitStats(theta, p)


def partition_cluster(tree: DomainTree, cluster: Cluster) -> Tuple[List[Cluster], List[Edge]]:
    """Split a cluster at its smallest internal critical value.

    Returns the subclusters (components after removing the chain edges) and
    the chain edges themselves (internal edges at exactly that value).
    """
    if len(cluster) < 2:
        raise TreeError("cannot partition a singleton cluster")
    internal = internal_edges(tree, cluster.members)
    gamma_prime = min(e.gamma for e in internal)
    chain = [e for e in internal if e.gamma == gamma_prime]
    keep = set(internal) - set(chain)
    subclusters: List[Cluster] = []
    assigned: set = set()
    for k in tree.nodes:
        if k in cluster.members and k not in assigned:
            comp = _component(tree, k, lambda e: e in keep)
            assigned |= comp
            subclusters.append(make_cluster(tree, comp))
    return subclusters, chain


def chain_stationary(subclusters: Sequence[Cluster],
                     q: Dict[Tuple[int, int], PowerLaw]) -> np.ndarray:
    """Stationary distribution of the subcluster jump chain.

    ``q[(s, u)]`` is the exponent-0 transition law from subcluster s to the
    adjacent subcluster u.  The quotient graph is a tree, so the chain is
    reversible and lambda is computed by propagating detailed-balance ratios;
    the full stationarity system is then checked as a residual.
    """
    r = len(subclusters)
    coeffs: Dict[Tuple[int, int], float] = {}
    neighbors: Dict[int, List[int]] = {s: [] for s in range(r)}
    for (s, u), law in q.items():
        if law.is_zero or law.expo != 0:
            raise TreeError(f"chain transition ({s},{u}) must be an exponent-0 law")
        if not law.coeff > 0:
            raise TreeError(f"chain transition ({s},{u}) has non-positive coefficient")
        coeffs[(s, u)] = law.coeff
        neighbors[s].append(u)
    lam = np.zeros(r)
    lam[0] = 1.0
    seen = {0}
    stack = [0]
    while stack:
        s = stack.pop()
        for u in neighbors[s]:
            if u not in seen:
                lam[u] = lam[s] * coeffs[(s, u)] / coeffs[(u, s)]
                seen.add(u)
                stack.append(u)
    if len(seen) != r:
        raise TreeError("subcluster quotient graph is not connected")
    lam /= lam.sum()
    # full stationarity residual: sum_s lam_s q_su == lam_u for every u
    flow = np.zeros(r)
    for (s, u), c in coeffs.items():
        flow[u] += lam[s] * c
    residual = float(np.max(np.abs(flow - lam)))
    if residual > STATIONARITY_TOL:
        raise InternalConsistencyError(
            f"stationarity residual {residual:.3e} exceeds {STATIONARITY_TOL}")
    for (s, u), c in coeffs.items():
        db = abs(lam[s] * c - lam[u] * coeffs[(u, s)])
        if db > DETAILED_BALANCE_TOL:
            raise InternalConsistencyError(
                f"detailed-balance residual {db:.3e} on chain edge ({s},{u})")
    return lam


def _chain_transitions(tree: DomainTree,
                       subclusters: Sequence[Cluster],
                       chain: Sequence[Edge],
                       stats: Sequence[ExitStats]) -> Dict[Tuple[int, int], PowerLaw]:
    owner = {}
    for idx, sub in enumerate(subclusters):
        for k in sub.members:
            owner[k] = idx
    q: Dict[Tuple[int, int], PowerLaw] = {}
    for e in chain:
        s, u = owner[e.u], owner[e.v]
        q[(s, u)] = stats[s].p[e]
        q[(u, s)] = stats[u].p[e]
    return q


def cluster_exit_stats(tree: DomainTree, cluster: Cluster) -> ExitStats:
    """Leading-order exit time and boundary-exit laws for a cluster (recursive).

    Singletons delegate to :func:`singleton_exit_stats`; larger clusters use
    the quasi-stationary cycle formulas over the subcluster partition.
    Exponent postconditions are enforced, never silently passed.
    """
    if not boundary_edges(tree, cluster.members):
        raise TreeError("the whole tree has no exit; exit stats undefined")
    if len(cluster) == 1:
        (k,) = cluster.members
        stats = singleton_exit_stats(tree, k)
    else:
        subclusters, chain = partition_cluster(tree, cluster)
        sub_stats = [cluster_exit_stats(tree, s) for s in subclusters]
        lam = chain_stationary(subclusters,
                               _chain_transitions(tree, subclusters, chain, sub_stats))
        bdry = set(boundary_edges(tree, cluster.members))
        p_out = [powerlaw_sum([st.p[e] for e in st.p if e in bdry])
                 for st in sub_stats]
        denom = powerlaw_sum([lam[s] * p_out[s] for s in range(len(subclusters))])
        theta = powerlaw_sum([lam[s] * sub_stats[s].theta
                              for s in range(len(subclusters))]) / denom
        p: Dict[Edge, PowerLaw] = {}
        for s, st in enumerate(sub_stats):
            for e in st.p:
                if e in bdry:
                    p[e] = lam[s] * st.p[e] / denom
        stats = ExitStats(theta, p)
    # exponent postconditions
    if stats.theta.expo != cluster.scale:
        raise InternalConsistencyError(
            f"theta exponent {stats.theta.expo} != cluster scale {cluster.scale}")
    zero_sum = 0.0
    for e, law in stats.p.items():
        if law.expo != -e.gamma + cluster.scale:
            raise InternalConsistencyError(
                f"exit law exponent {law.expo} != {-e.gamma + cluster.scale} "
                f"on edge ({e.u}, {e.v})")
        if law.expo == 0:
            zero_sum += law.coeff
    if abs(zero_sum - 1.0) > COEFF_SUM_TOL:
        raise InternalConsistencyError(
            f"exponent-0 exit coefficients sum to {zero_sum}, expected 1")
    return stats


def distribute(tree: DomainTree, cluster: Cluster) -> Dict[str, float]:
    """Limiting distribution over member domains inside one cluster."""
    if len(cluster) == 1:
        (k,) = cluster.members
        return {k: 1.0}
    subclusters, chain = partition_cluster(tree, cluster)
    sub_stats = [cluster_exit_stats(tree, s) for s in subclusters]
    lam = chain_stationary(subclusters,
                           _chain_transitions(tree, subclusters, chain, sub_stats))
    expos = {st.theta.expo for st in sub_stats}
    if len(expos) != 1:
        raise InternalConsistencyError(
            f"subcluster exit-time exponents differ: {sorted(map(str, expos))}")
    weights = np.array([lam[s] * sub_stats[s].theta.coeff
                        for s in range(len(subclusters))])
    weights /= weights.sum()
    out: Dict[str, float] = {}
    for w, sub in zip(weights, subclusters):
        for k, v in distribute(tree, sub).items():
            out[k] = w * v
    return out


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetastableProfile:
    """Scale ladder and per-window limiting weights for one start domain."""

    start: str
    scales: Tuple[Optional[Fraction], ...]      # 0, gamma_1, ..., None (=-inf)
    windows: Tuple[Dict[str, float], ...]       # windows[n-1] covers (scales[n-1], scales[n])

    @property
    def n_windows(self) -> int:
        return len(self.windows)


def metastable_profile(tree: DomainTree, i: str) -> MetastableProfile:
    clusters = scale_ladder(tree, i)
    windows = []
    for c in clusters:
        w = distribute(tree, c)
        support = {k for k, v in w.items() if v > 0.0}
        if support != set(c.members):
            raise InternalConsistencyError(
                "window support does not match the cluster member set")
        windows.append(w)
    first = windows[0]
    if set(first) != {i} or abs(first[i] - 1.0) > 1e-15:
        raise InternalConsistencyError("first window must be the start indicator")
    return MetastableProfile(i, tuple(ladder_scales(clusters)), tuple(windows))


def window_index(tau, scales: Sequence[Optional[Fraction]]) -> int:
    """Window n with gamma_{n-1} > tau > gamma_n for a time scale t = eps**tau."""
    tau = Fraction(tau)
    for g in scales:
        if g is not None and tau == g:
            raise ValueError("critical time scale: no limit guaranteed by the theory")
    for n in range(1, len(scales)):
        lo, hi = scales[n], scales[n - 1]
        if _scale_lt(lo, tau) and (hi is not None and tau < hi):
            return n
    raise ValueError(f"time-scale exponent {tau} lies outside every window")


def rho_invariance_check(tree: DomainTree, trials: int, seed: int) -> float:
    """Max profile change under random rescaling of every surface rho.

    The profiles are determined by the unperturbed operator alone, so the
    answer must be zero up to floating-point noise.
    """
    base = {i: metastable_profile(tree, i) for i in tree.nodes}
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        factors = np.exp(rng.uniform(np.log(0.1), np.log(10.0), size=len(tree.edges)))
        scaled = tree.with_rho_factors(factors)
        for i in tree.nodes:
            prof = metastable_profile(scaled, i)
            for w_new, w_old in zip(prof.windows, base[i].windows):
                for k in tree.nodes:
                    dev = abs(w_new.get(k, 0.0) - w_old.get(k, 0.0))
                    worst = max(worst, dev)
    return worst


# ---------------------------------------------------------------------------
# shipped example trees
# ---------------------------------------------------------------------------

def two_domain_tree() -> DomainTree:
    return DomainTree(
        {"1": 10.0, "2": 10.0},
        [Edge("1", "2", Fraction(-1))],
    )


def chain3_tree() -> DomainTree:
    return DomainTree(
        {"1": 10.0, "2": 10.0, "3": 10.0},
        [Edge("1", "2", Fraction(-1)), Edge("2", "3", Fraction(-2))],
    )


def star5_tree() -> DomainTree:
    return DomainTree(
        {"c": 20.0, "1": 5.0, "2": 5.0, "3": 5.0, "4": 5.0},
        [
            Edge("c", "1", Fraction(-1)),
            Edge("c", "2", Fraction(-1)),
            Edge("c", "3", Fraction(-2)),
            Edge("c", "4", Fraction(-3)),
        ],
    )


def shipped_trees() -> Dict[str, DomainTree]:
    return {"two_domain": two_domain_tree(),
            "chain3": chain3_tree(),
            "star5": star5_tree()}


def random_tree(rng: np.random.Generator, max_nodes: int = 8,
                palette: Sequence[str] = ("-1", "-1", "-3/2", "-2", "-5/2", "-3")) -> DomainTree:
    """Random tree with exponents from a small palette (ties are frequent)."""
    n = int(rng.integers(1, max_nodes + 1))
    names = [str(k) for k in range(n)]
    prefactors = {k: float(np.exp(rng.uniform(-1, 1))) for k in names}
    edges = []
    for k in range(1, n):
        parent = str(int(rng.integers(0, k)))
        gamma = Fraction(str(rng.choice(palette)))
        edges.append(Edge(parent, names[k], gamma,
                          rho=float(np.exp(rng.uniform(-1, 1))),
                          c_uv=float(np.exp(rng.uniform(-1, 1))),
                          c_vu=float(np.exp(rng.uniform(-1, 1)))))
    return DomainTree(prefactors, edges)
