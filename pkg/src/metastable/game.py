"""Die-and-coin renewal game and its exponential limit law.

Each round rolls an asymmetric m-sided die (probabilities q_i), accrues a
holding time s, then flips the type's success coin p_i; on failure a second
holding time t accrues and play continues.  As the per-round success
probability p = sum q_i p_i vanishes, the total playing time (normalized by
the mean holding time over p) becomes unit exponential, independent of which
prize type eventually won.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .montecarlo import ks_to_unit_exponential

RATE_WARNING_LEVEL = 0.05


@dataclass(frozen=True)
class HoldingLaw:
    """Samplable non-negative holding-time law: constant, exponential, lognormal."""

    kind: str
    mean: float
    sigma: float = 1.0  # log-scale shape, lognormal only

    def __post_init__(self):
        if self.kind not in ("constant", "exponential", "lognormal"):
            raise ValueError(f"unknown holding law {self.kind!r}")
        if self.mean < 0:
            raise ValueError("holding-time mean must be non-negative")

    def sample(self, rng: np.random.Generator, size=None) -> np.ndarray:
        if self.kind == "constant":
            return np.full(size if size is not None else (), self.mean)
        if self.kind == "exponential":
            return rng.exponential(self.mean, size=size)
        mu = math.log(self.mean) - 0.5 * self.sigma ** 2
        return rng.lognormal(mu, self.sigma, size=size)


@dataclass(frozen=True)
class GameConfig:
    """One parameter point of the game; p_i shrink with epsilon."""

    q: Tuple[float, ...]
    p: Tuple[float, ...]
    s_law: HoldingLaw
    t_law: HoldingLaw
    epsilon: float

    def __post_init__(self):
        if len(self.q) != len(self.p) or not self.q:
            raise ValueError("q and p must be equal-length, non-empty")
        if abs(sum(self.q) - 1.0) > 1e-12:
            raise ValueError(f"die probabilities must sum to 1, got {sum(self.q)}")
        if any(not 0 < pi <= 1 for pi in self.p):
            raise ValueError("success probabilities must lie in (0, 1]")
        if any(qi <= 0 for qi in self.q):
            raise ValueError("die probabilities must be positive")
        ratio = max(self.p_total / qi for qi in self.q)
        if ratio > RATE_WARNING_LEVEL and self.p_total < 1.0:
            warnings.warn(f"p/q_i = {ratio:.3g} is not small; the limit regime "
                          "may not be visible", stacklevel=2)

    @property
    def m(self) -> int:
        return len(self.q)

    @property
    def p_total(self) -> float:
        return float(np.dot(self.q, self.p))

    @property
    def xi(self) -> float:
        """Mean of one s holding time."""
        return self.s_law.mean


@dataclass(frozen=True)
class GameOutcome:
    prize_type: int
    rounds: int
    total_time: float


@dataclass(frozen=True)
class Modulation:
    """Bounded Markov-chain modulation of the success coins (stress hook).

    The chain advances one step per round; the current state's factor scales
    every p_i (clipped to 1).
    """

    transition: np.ndarray
    factors: Tuple[float, ...]
    start_state: int = 0


def play(config: GameConfig, seed: int,
         modulation: Optional[Modulation] = None) -> GameOutcome:
    """One faithful round-by-round game.

    The draw order matches the filtration structure: (die, s) first, then the
    success coin, then t only on failure.
    """
    rng = np.random.Generator(np.random.Philox(key=[seed, 0]))
    q = np.asarray(config.q)
    total = 0.0
    rounds = 0
    state = modulation.start_state if modulation is not None else 0
    while True:
        rounds += 1
        j = int(rng.choice(config.m, p=q))
        total += float(config.s_law.sample(rng))
        p_j = config.p[j]
        if modulation is not None:
            p_j = min(1.0, p_j * modulation.factors[state])
        if rng.random() < p_j:
            return GameOutcome(j, rounds, total)
        total += float(config.t_law.sample(rng))
        if modulation is not None:
            state = int(rng.choice(len(modulation.factors),
                                   p=modulation.transition[state]))


def sample_outcomes(config: GameConfig, n: int, seed: int
                    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """n independent game outcomes, sampled from the exact joint law.

    In the i.i.d. game the round count is geometric(p) and exactly
    independent of the winning type, whose law is q_i p_i / p; holding times
    are then summed per replication.  Distributionally identical to n calls
    of :func:`play` but vectorized.
    """
    rng = np.random.Generator(np.random.Philox(key=[seed, 1]))
    q = np.asarray(config.q)
    win_law = q * np.asarray(config.p)
    win_law = win_law / win_law.sum()
    types = rng.choice(config.m, size=n, p=win_law)
    rounds = rng.geometric(config.p_total, size=n)
    times = _holding_sum(config.s_law, rounds, rng) \
        + _holding_sum(config.t_law, rounds - 1, rng)
    return types, rounds, times


def _holding_sum(law: HoldingLaw, counts: np.ndarray,
                 rng: np.random.Generator) -> np.ndarray:
    """Sum of `counts[r]` i.i.d. holding times per replication."""
    counts = np.asarray(counts, dtype=np.int64)
    if law.mean == 0.0:
        return np.zeros(counts.shape)
    if law.kind == "constant":
        return counts * law.mean
    if law.kind == "exponential":
        out = np.zeros(counts.shape)
        pos = counts > 0
        out[pos] = rng.gamma(counts[pos], law.mean)
        return out
    # lognormal has no closed-form sum: draw explicitly, reduce per replication
    mu = math.log(law.mean) - 0.5 * law.sigma ** 2
    total = int(counts.sum())
    draws = rng.lognormal(mu, law.sigma, size=total)
    edges = np.concatenate(([0], np.cumsum(counts)[:-1]))
    out = np.add.reduceat(draws, edges) if total else np.zeros(counts.shape)
    out[counts == 0] = 0.0
    return out


@dataclass(frozen=True)
class LimitCell:
    """Per (epsilon, prize type) verification numbers."""

    epsilon: float
    prize_type: int
    mean_ratio: float
    ks: float
    n_wins: int
    flagged: bool = False


def verify_limits(configs: Sequence[GameConfig], n_replications: int,
                  seed: int) -> Dict[Tuple[float, int], LimitCell]:
    """Check both game-limit conclusions down a decreasing epsilon list.

    Per type i: mean_ratio = (empirical mean of T_i) * p / xi, which must
    trend to 1, and the KS distance of (p/xi) T_i to Exp(1), which must
    trend to 0.
    """
    eps_list = [c.epsilon for c in configs]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("epsilon list must be strictly decreasing")
    out: Dict[Tuple[float, int], LimitCell] = {}
    for ci, config in enumerate(configs):
        types, _, times = sample_outcomes(config, n_replications, seed + ci)
        scale = config.p_total / config.xi
        for i in range(config.m):
            sel = times[types == i]
            if sel.size == 0:
                out[(config.epsilon, i)] = LimitCell(
                    config.epsilon, i, math.nan, math.nan, 0, flagged=True)
                continue
            norm = sel * scale
            out[(config.epsilon, i)] = LimitCell(
                config.epsilon, i,
                float(norm.mean()),
                ks_to_unit_exponential(norm),
                int(sel.size))
    return out
