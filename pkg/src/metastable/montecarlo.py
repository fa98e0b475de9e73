"""Monte Carlo estimators and the statistics they report.

Every estimator is a pure function of (inputs, seed) and returns point
estimates with 95% confidence intervals: Wilson intervals for proportions,
normal-approximation intervals for means.  Power laws are fitted by ordinary
least squares on log-log points (at least 4 abscissae over a decade).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats as spstats

Z95 = 1.959963984540054  # two-sided 95% normal quantile

SPOIL_THRESHOLD = 0.01   # timeout fraction above which an estimate is unusable


class EstimateSpoiledError(RuntimeError):
    """Too many timed-out trajectories; the asymptotic regime was not reached."""


def wilson_interval(successes: int, n: int, z: float = Z95) -> Tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("need at least one sample")
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class EstimateResult:
    """Point estimate with a 95% interval and enough provenance to rerun it."""

    point: float
    ci_low: float
    ci_high: float
    n_samples: int
    n_timeouts: int = 0
    seed: Optional[int] = None
    model_digest: Optional[str] = None

    def __post_init__(self):
        if not (self.ci_low <= self.point <= self.ci_high):
            raise ValueError("interval must contain the point estimate")

    @property
    def flagged(self) -> bool:
        return self.n_timeouts > SPOIL_THRESHOLD * self.n_samples

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high


def proportion_estimate(successes: int, n: int, n_timeouts: int = 0,
                        seed: Optional[int] = None,
                        model_digest: Optional[str] = None) -> EstimateResult:
    lo, hi = wilson_interval(successes, n)
    p = successes / n
    return EstimateResult(p, min(lo, p), max(hi, p), n, n_timeouts, seed, model_digest)


def mean_estimate(samples: np.ndarray, n_timeouts: int = 0,
                  seed: Optional[int] = None,
                  model_digest: Optional[str] = None) -> EstimateResult:
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    if n == 0:
        raise ValueError("need at least one sample")
    m = float(samples.mean())
    se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return EstimateResult(m, m - Z95 * se, m + Z95 * se, n, n_timeouts, seed, model_digest)


@dataclass(frozen=True)
class SlopeFit:
    """OLS fit of log-ordinate against log-abscissa."""

    slope: float
    intercept: float
    slope_stderr: float
    r_squared: float
    support: Tuple[Tuple[float, float], ...]

    def slope_ci(self, z: float = Z95) -> Tuple[float, float]:
        return self.slope - z * self.slope_stderr, self.slope + z * self.slope_stderr


def fit_loglog(abscissae: Sequence[float], ordinates: Sequence[float]) -> SlopeFit:
    """Least-squares power-law fit; requires >= 4 points over >= 1 decade."""
    x = np.log(np.asarray(abscissae, dtype=float))
    y = np.log(np.asarray(ordinates, dtype=float))
    if x.size < 4:
        raise ValueError(f"need at least 4 support points, got {x.size}")
    # tiny slack so e.g. [0.01, ..., 0.1] counts as a full decade despite
    # floating-point rounding of the endpoints
    if x.max() - x.min() < math.log(10.0) - 1e-9:
        raise ValueError("support must span at least one decade")
    res = spstats.linregress(x, y)
    return SlopeFit(float(res.slope), float(res.intercept), float(res.stderr),
                    float(res.rvalue) ** 2, tuple(zip(x.tolist(), y.tolist())))


def ks_to_unit_exponential(samples: np.ndarray) -> float:
    """Kolmogorov-Smirnov distance of the sample to Exp(1)."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n == 0:
        raise ValueError("need at least one sample")
    cdf = 1.0 - np.exp(-x)
    grid = np.arange(n, dtype=float)
    d_plus = np.max((grid + 1) / n - cdf)
    d_minus = np.max(cdf - grid / n)
    return float(max(d_plus, d_minus))


# ---------------------------------------------------------------------------
# closed-form transition probability between layers
# ---------------------------------------------------------------------------

def transition_formula(zeta: float, kappa1: float, kappa2: float, gamma: float) -> float:
    """Probability of reaching the outer layer kappa2 before the inner kappa1.

    Valid for the unperturbed motion started on the layer at zeta inside the
    band [kappa1, kappa2]; the same expression serves both signs of gamma.
    """
    if gamma == 0:
        raise ValueError("gamma must be non-zero")
    if not (0 < kappa1 <= zeta <= kappa2) or kappa1 >= kappa2:
        raise ValueError(
            f"need 0 < kappa1 <= zeta <= kappa2, got ({kappa1}, {zeta}, {kappa2})")
    num = zeta ** gamma - kappa1 ** gamma
    den = kappa2 ** gamma - kappa1 ** gamma
    return num / den


# ---------------------------------------------------------------------------
# layer-transition estimators
# ---------------------------------------------------------------------------

def estimate_transition(model, perturbation, k: int, zeta: float,
                        kappa1: float, kappa2: float, n: int, seed: int,
                        policy=None, side: int = +1,
                        workers: int = 1) -> EstimateResult:
    """Frequency of hitting the outer layer before the inner one.

    Unperturbed: paths start at distance zeta on one side of surface k and
    stop at distance kappa1 or kappa2.  Perturbed: the surface itself is an
    additional (failure) stop target.  The band must sit inside the exact
    normal-form core.
    """
    from .integrate import StepPolicy, StopSpec, run_batch
    from .model import model_hash

    if not (0 < kappa1 <= zeta <= kappa2):
        raise ValueError(f"need 0 < kappa1 <= zeta <= kappa2, got "
                         f"({kappa1}, {zeta}, {kappa2})")
    if kappa2 > model.core_radius:
        raise ValueError(f"band [{kappa1}, {kappa2}] leaves the exact core "
                         f"(radius {model.core_radius})")
    s = model.surfaces[k]
    levels = (s + side * kappa1, s + side * kappa2)
    surfaces = (s,) if perturbation is not None else ()
    stop = StopSpec(levels=levels, surfaces=surfaces)
    policy = policy or StepPolicy(theta_step=0.05)
    starts = np.full(n, s + side * zeta)
    codes, _, _, _ = run_batch(starts, model, perturbation, stop, seed,
                               policy=policy, workers=workers)
    n_timeouts = int(np.sum(codes == -1))
    successes = int(np.sum(codes == 1))
    return proportion_estimate(successes, n, n_timeouts, seed,
                               model_hash(model, perturbation))


def estimate_transition_2d(model, solution, zeta: float, kappa1: float,
                           kappa2: float, n: int, seed: int,
                           policy=None) -> EstimateResult:
    """Unperturbed band transition for the 2-D normal form.

    Layers are level sets of phi(y)^(1/gamma) * z with phi and gamma from
    the supplied exponent solution.
    """
    from .integrate import run_band_2d
    from .model import model_hash

    outer = run_band_2d(model, solution.phi, solution.gamma, zeta, kappa1,
                        kappa2, n, seed, policy=policy)
    return proportion_estimate(int(outer.sum()), n, 0, seed, model_hash(model))


def fit_gamma_from_transitions(zetas: Sequence[float],
                               estimates: Sequence[EstimateResult],
                               kappa1: float, kappa2: float
                               ) -> Tuple[float, float]:
    """Fit gamma to measured band-transition probabilities.

    Weighted nonlinear least squares of the closed-form expression over the
    zeta sweep; returns (gamma_hat, standard error).
    """
    from scipy.optimize import curve_fit

    z = np.asarray(zetas, dtype=float)
    p = np.array([e.point for e in estimates])
    sig = np.array([max((e.ci_high - e.ci_low) / (2 * Z95), 1e-4)
                    for e in estimates])

    def f(zz, g):
        return (zz ** g - kappa1 ** g) / (kappa2 ** g - kappa1 ** g)

    popt, pcov = curve_fit(f, z, p, p0=[-1.0], sigma=sig, absolute_sigma=True)
    return float(popt[0]), float(np.sqrt(pcov[0, 0]))


# ---------------------------------------------------------------------------
# surface-hit probability and the rho prefactor
# ---------------------------------------------------------------------------

MIN_SUCCESSES = 50
HIT_ZETA_OVER_EPS = 20.0    # default s1: zeta >= s1 * eps
HIT_ZETA_OVER_KAPPA = 0.1   # default s2: zeta <= s2 * kappa


def estimate_surface_hit(model, perturbation, k: int,
                         zeta_list: Sequence[float], kappa: float, n: int,
                         seed: int, policy=None, side: int = +1,
                         fit: bool = True, workers: int = 1):
    """Surface-hit probabilities over a zeta sweep, with the power-law fit.

    Returns (SlopeFit or None, per-zeta EstimateResult dict, per-zeta
    rho_hat dict); points with too few successes are dropped from the fit
    with a warning.
    """
    import warnings

    from .integrate import StepPolicy, StopSpec, run_batch
    from .model import model_hash

    eps = perturbation.epsilon
    for zeta in zeta_list:
        if zeta < HIT_ZETA_OVER_EPS * eps:
            raise ValueError(f"zeta {zeta} below {HIT_ZETA_OVER_EPS} * eps")
        if zeta > HIT_ZETA_OVER_KAPPA * kappa:
            raise ValueError(f"zeta {zeta} above {HIT_ZETA_OVER_KAPPA} * kappa")
    if kappa > model.core_radius:
        raise ValueError("outer layer must sit inside the exact core")
    s = model.surfaces[k]
    stop = StopSpec(levels=(s + side * kappa,), surfaces=(s,))
    policy = policy or StepPolicy(theta_step=0.05)
    digest = model_hash(model, perturbation)
    gamma = 1.0 - model.locals_[k].beta / model.locals_[k].alpha
    estimates: Dict[float, EstimateResult] = {}
    rho_hat: Dict[float, EstimateResult] = {}
    usable = []
    for j, zeta in enumerate(zeta_list):
        codes, _, _, _ = run_batch(np.full(n, s + side * zeta), model,
                                   perturbation, stop, seed + j, policy=policy,
                                   workers=workers)
        hits = int(np.sum(codes == 1))
        est = proportion_estimate(hits, n, int(np.sum(codes == -1)), seed + j,
                                  digest)
        estimates[zeta] = est
        scale = (eps / zeta) ** gamma
        rho_hat[zeta] = EstimateResult(est.point * scale, est.ci_low * scale,
                                       est.ci_high * scale, n, est.n_timeouts,
                                       seed + j, digest)
        if hits >= MIN_SUCCESSES:
            usable.append((zeta, est.point))
        else:
            warnings.warn(f"zeta={zeta}: only {hits} surface hits; point "
                          "dropped from the power-law fit", stacklevel=2)
    slope_fit = None
    if fit and len(usable) >= 4:
        slope_fit = fit_loglog([z for z, _ in usable], [p for _, p in usable])
    return slope_fit, estimates, rho_hat


# ---------------------------------------------------------------------------
# exit-time statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExitStatsResult:
    """Exit-time statistics with per-target conditional splits."""

    mean: EstimateResult
    second_moment: EstimateResult
    moment_ratio: float
    ks_to_exponential: float
    per_target: Dict[int, "TargetStats"]
    n_timeouts: int


@dataclass(frozen=True)
class TargetStats:
    probability: EstimateResult
    mean_time: EstimateResult
    ks_to_exponential: float


def estimate_exit_stats(model, perturbation, start: float,
                        stop_surfaces: Sequence[float], n: int, seed: int,
                        max_time: Optional[float] = None,
                        policy=None) -> ExitStatsResult:
    """Exit times from the domain bounded by the given surfaces.

    Conditional means, second moments, and KS distances to the
    mean-normalized unit exponential, per exit target and pooled.
    """
    from .integrate import StepPolicy, StopSpec, run_batch
    from .model import model_hash

    if not stop_surfaces:
        raise ValueError("stop set must be non-empty")
    stop = StopSpec(surfaces=tuple(stop_surfaces), max_time=max_time)
    policy = policy or StepPolicy()
    digest = model_hash(model, perturbation)
    codes, times, _, _ = run_batch(np.full(n, float(start)), model,
                                   perturbation, stop, seed, policy=policy)
    n_timeouts = int(np.sum(codes == -1))
    done = codes >= 0
    t = times[done]
    if t.size == 0:
        raise EstimateSpoiledError("no trajectory exited within budget")
    mean = mean_estimate(t, n_timeouts, seed, digest)
    second = mean_estimate(t ** 2, n_timeouts, seed, digest)
    ratio = second.point / mean.point ** 2
    ks = ks_to_unit_exponential(t / mean.point)
    per_target: Dict[int, TargetStats] = {}
    for ti in range(len(stop_surfaces)):
        sel = t[codes[done] == ti]
        if sel.size == 0:
            continue
        per_target[ti] = TargetStats(
            proportion_estimate(sel.size, int(done.sum()), n_timeouts, seed, digest),
            mean_estimate(sel, 0, seed, digest),
            ks_to_unit_exponential(sel / sel.mean()),
        )
    result = ExitStatsResult(mean, second, ratio, ks, per_target, n_timeouts)
    if n_timeouts > SPOIL_THRESHOLD * n:
        raise EstimateSpoiledError(
            f"{n_timeouts}/{n} trajectories timed out; asymptotic regime not "
            "reached")
    return result


# ---------------------------------------------------------------------------
# occupation histogram (unperturbed invariant density)
# ---------------------------------------------------------------------------

MIN_EXCURSIONS = 1000


@dataclass(frozen=True)
class OccupationResult:
    bin_edges: np.ndarray
    masses: np.ndarray
    density: np.ndarray
    slope: SlopeFit
    total_time: float
    excursions: int
    flagged: bool


def occupation_histogram(model, k: int, side: int, z_lo: float, kappa: float,
                         n_bins: int, t_total: float, burn_in: float,
                         seed: int) -> OccupationResult:
    """Time-averaged occupation density near one side of one surface.

    Unperturbed dynamics only; the fitted log-log slope of density against
    distance estimates -gamma - 1.
    """
    from .integrate import occupation_run

    if t_total <= 0:
        raise ValueError("t_total must be positive")
    if not 0 < z_lo < kappa <= model.core_radius:
        raise ValueError("need 0 < z_lo < kappa <= core radius")
    edges = np.geomspace(z_lo, kappa, n_bins + 1)
    masses, recorded, excursions = occupation_run(
        model, k, side, edges, t_total, burn_in, seed)
    widths = np.diff(edges)
    density = masses / widths / max(recorded, 1e-300)
    centers = np.sqrt(edges[:-1] * edges[1:])
    keep = masses > 0
    slope = fit_loglog(centers[keep], density[keep])
    flagged = excursions < MIN_EXCURSIONS
    return OccupationResult(edges, masses, density, slope, recorded,
                            excursions, flagged)


# ---------------------------------------------------------------------------
# surface exit split and decision times
# ---------------------------------------------------------------------------

def estimate_surface_exit_split(model, perturbation, k: int, kappa0: float,
                                n: int, seed: int, policy=None
                                ) -> Tuple[EstimateResult, EstimateResult]:
    """Probability of leaving a surface upward, and the mean decision time.

    Paths start exactly on surface k and run until they reach distance
    kappa0 on either side.
    """
    from .integrate import StepPolicy, StopSpec, run_batch
    from .model import model_hash

    if kappa0 > model.core_radius:
        raise ValueError("decision layer must sit inside the exact core")
    s = model.surfaces[k]
    stop = StopSpec(levels=(s + kappa0, s - kappa0))
    policy = policy or StepPolicy(theta_step=0.05)
    digest = model_hash(model, perturbation)
    codes, times, _, _ = run_batch(np.full(n, s), model, perturbation, stop,
                                   seed, policy=policy)
    up = proportion_estimate(int(np.sum(codes == 0)), n,
                             int(np.sum(codes == -1)), seed, digest)
    decision = mean_estimate(times[codes >= 0], int(np.sum(codes == -1)),
                             seed, digest)
    return up, decision


def decision_time_regression(model, k: int, kappa0: float,
                             eps_list: Sequence[float], n: int, seed: int,
                             policy=None):
    """Mean decision time against |ln eps|: (slope, intercept, r_squared)."""
    from .model import PerturbationSpec

    means = []
    for j, eps in enumerate(eps_list):
        _, decision = estimate_surface_exit_split(
            model, PerturbationSpec(eps), k, kappa0, n, seed + j, policy=policy)
        means.append(decision.point)
    x = np.abs(np.log(np.asarray(eps_list, dtype=float)))
    res = spstats.linregress(x, np.asarray(means))
    return float(res.slope), float(res.intercept), float(res.rvalue) ** 2


# ---------------------------------------------------------------------------
# per-edge constants of the domain tree
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EdgeConstantsResult:
    """Per-epsilon exit splits and mean exit times for every 1-D domain."""

    eps_list: Tuple[float, ...]
    splits: Dict[Tuple[int, int], Dict[float, EstimateResult]]
    theta_hat: Dict[int, Dict[float, EstimateResult]]
    rho_ratio: Dict[int, EstimateResult]
    flagged_edges: Tuple[Tuple[int, int], ...]


def fit_edge_constants(model, eps_list: Sequence[float], n: int, seed: int,
                       max_time: Optional[float] = None,
                       policy=None) -> EdgeConstantsResult:
    """Empirical exit statistics from every domain of a multi-surface model.

    splits[(i, j)][eps] is the probability that domain i (0-based, left to
    right) exits through its j-th adjacent surface; theta_hat[i][eps] the
    conditional mean exit time.  rho_ratio[k] compares surface-hit
    probabilities from the two sides of surface k (the prefactor is the same
    on both sides, so the ratio must cover 1).
    """
    from .model import PerturbationSpec

    if len(model.surfaces) < 1:
        raise ValueError("need a multi-surface model")
    surfaces = list(model.surfaces)
    lo, hi = model.bounds
    domain_edges = [lo] + surfaces + [hi]
    n_dom = len(surfaces) + 1
    splits: Dict[Tuple[int, int], Dict[float, EstimateResult]] = {}
    theta_hat: Dict[int, Dict[float, EstimateResult]] = {i: {} for i in range(n_dom)}
    flagged = []
    for ei, eps in enumerate(eps_list):
        pert = PerturbationSpec(eps)
        for i in range(n_dom):
            adj = [s for s in (i - 1, i) if 0 <= s < len(surfaces)]
            start = 0.5 * (domain_edges[i] + domain_edges[i + 1])
            res = estimate_exit_stats(model, pert, start,
                                      [surfaces[s] for s in adj], n,
                                      seed + 97 * ei + i, max_time=max_time,
                                      policy=policy)
            theta_hat[i][eps] = res.mean
            for jj, s in enumerate(adj):
                cell = res.per_target.get(jj)
                if cell is None:
                    flagged.append((i, s))
                    continue
                splits.setdefault((i, s), {})[eps] = cell.probability
                if cell.probability.point * n < MIN_SUCCESSES:
                    flagged.append((i, s))
    # two-sided rho comparison; rho is eps-independent, so pick the largest
    # eps for which the (zeta, kappa) window constraints are satisfiable
    kappa = model.core_radius
    eps = min(min(eps_list),
              HIT_ZETA_OVER_KAPPA * kappa / HIT_ZETA_OVER_EPS)
    pert = PerturbationSpec(eps)
    rho_ratio: Dict[int, EstimateResult] = {}
    zeta = HIT_ZETA_OVER_EPS * eps
    for k in range(len(surfaces)):
        _, _, rp = estimate_surface_hit(model, pert, k, [zeta], kappa, n,
                                        seed + 1000 + k, side=+1, fit=False)
        _, _, rm = estimate_surface_hit(model, pert, k, [zeta], kappa, n,
                                        seed + 2000 + k, side=-1, fit=False)
        a, b = rp[zeta], rm[zeta]
        if a.point > 0 and b.point > 0:
            ratio = a.point / b.point
            rel = math.sqrt(((a.ci_high - a.ci_low) / (2 * Z95 * a.point)) ** 2
                            + ((b.ci_high - b.ci_low) / (2 * Z95 * b.point)) ** 2)
            rho_ratio[k] = EstimateResult(ratio, ratio * (1 - Z95 * rel),
                                          ratio * (1 + Z95 * rel), n)
    return EdgeConstantsResult(tuple(eps_list), splits, theta_hat, rho_ratio,
                               tuple(flagged))
