"""Euler-Maruyama trajectories with adaptive steps near degenerate surfaces.

The step policy shrinks dt so that both the one-step noise displacement and
the drift displacement stay below a fixed fraction of the distance to the
nearest surface (floored at the perturbation scale), which is what resolves
the logarithmic near-surface dynamics.  Crossings of layer levels are
detected by sign change between consecutive positions and linearly
interpolated; trajectory time is accumulated with compensated summation.

Paths are organized in fixed-size blocks, each with its own counter-based
random stream keyed by (seed, block index), so results are bitwise
independent of how blocks are scheduled across workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .model import Model1D, Model2DNormalForm, PerturbationSpec

BLOCK_SIZE = 4096

TIMEOUT_CODE = -1


class NumericalFailure(RuntimeError):
    """A trajectory produced a non-finite state."""


@dataclass(frozen=True)
class StepPolicy:
    """Adaptive step-size control."""

    theta_step: float = 0.1
    dt_max: float = 1e-2
    dt_min: float = 1e-14
    max_steps: int = 50_000_000
    dist_floor: float = 0.0   # extra lower bound on the resolved distance scale

    def __post_init__(self):
        if not 0 < self.theta_step <= 0.5:
            raise ValueError(f"theta_step must lie in (0, 0.5], got {self.theta_step}")
        if not self.dt_min < self.dt_max:
            raise ValueError("dt_min must be below dt_max")


@dataclass(frozen=True)
class PathEvent:
    """First event that stopped a trajectory."""

    kind: str          # "hit_layer" | "hit_surface" | "time_out"
    index: int         # level or surface index within the stop spec
    time: float
    position: float


@dataclass(frozen=True)
class StopSpec:
    """Stop targets for 1-D runs: layer levels, surfaces, and a time budget."""

    levels: Tuple[float, ...] = ()
    surfaces: Tuple[float, ...] = ()
    max_time: Optional[float] = None

    def __post_init__(self):
        if not self.levels and not self.surfaces and self.max_time is None:
            raise ValueError("stop spec must contain at least one target")


def step(x, model, perturbation: Optional[PerturbationSpec], dt, noise_pair):
    """One Euler-Maruyama step; noise_pair = (xi_intrinsic, xi_perturbation)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    xi1, xi2 = noise_pair
    a = model.diffusion(x)
    b = model.drift(x)
    out = x + b * dt + np.sqrt(2.0 * a * dt) * xi1
    if perturbation is not None:
        eps = perturbation.epsilon
        out = out + eps * eps * perturbation.tilde_drift * dt \
            + eps * np.sqrt(2.0 * perturbation.tilde_diffusion * dt) * xi2
    return out


def _dist_to_surfaces(x: np.ndarray, surfaces: np.ndarray) -> np.ndarray:
    if surfaces.size == 0:
        return np.full(np.shape(x), np.inf)
    return np.min(np.abs(np.asarray(x)[..., None] - surfaces), axis=-1)


def adaptive_dt(x, model, perturbation: Optional[PerturbationSpec],
                policy: StepPolicy):
    """Step size keeping noise and drift displacements below theta * scale."""
    x = np.asarray(x, dtype=float)
    a = model.diffusion(x)
    b = model.drift(x)
    eps = perturbation.epsilon if perturbation is not None else 0.0
    ta = perturbation.tilde_diffusion if perturbation is not None else 0.0
    m = _dist_to_surfaces(x, np.asarray(model.surfaces))
    m = np.maximum(np.maximum(m, eps), policy.dist_floor)
    m = np.minimum(m, 1.0)
    denom = 2.0 * a + 2.0 * eps * eps * ta + np.abs(b) * m
    with np.errstate(divide="ignore"):
        dt = policy.theta_step ** 2 * m * m / np.maximum(denom, 1e-300)
    return np.clip(dt, policy.dt_min, policy.dt_max)


def _run_block(x0: np.ndarray, model: Model1D,
               perturbation: Optional[PerturbationSpec], stop: StopSpec,
               policy: StepPolicy, rng: np.random.Generator):
    """Advance one block of paths to their first stop event."""
    n = x0.size
    x = x0.astype(float).copy()
    t = np.zeros(n)
    t_comp = np.zeros(n)        # Kahan compensation
    code = np.full(n, TIMEOUT_CODE, dtype=np.int64)
    ev_time = np.full(n, np.nan)
    ev_pos = np.full(n, np.nan)
    steps = np.zeros(n, dtype=np.int64)
    levels = np.asarray(stop.levels)
    hit_surf = np.asarray(stop.surfaces)
    n_lev = levels.size
    eps = perturbation.epsilon if perturbation is not None else 0.0
    ta = perturbation.tilde_diffusion if perturbation is not None else 0.0
    td = perturbation.tilde_drift if perturbation is not None else 0.0
    model_surfaces = np.asarray(model.surfaces)
    active = np.arange(n)

    # immediate events for paths starting on a target
    for li, lev in enumerate(levels):
        on = x[active] == lev
        if np.any(on):
            idx = active[on]
            code[idx] = li
            ev_time[idx] = 0.0
            ev_pos[idx] = lev
            active = active[~on]

    total_steps = 0
    while active.size:
        xa = x[active]
        a = model.diffusion(xa)
        b = model.drift(xa)
        m = _dist_to_surfaces(xa, model_surfaces)
        m = np.minimum(np.maximum(np.maximum(m, eps), policy.dist_floor), 1.0)
        denom = 2.0 * a + 2.0 * eps * eps * ta + np.abs(b) * m
        dt = np.clip(policy.theta_step ** 2 * m * m / np.maximum(denom, 1e-300),
                     policy.dt_min, policy.dt_max)
        if stop.max_time is not None:
            dt = np.minimum(dt, stop.max_time - t[active] + 1e-30)
        xi = rng.standard_normal((2, active.size))
        xn = xa + b * dt + np.sqrt(2.0 * a * dt) * xi[0]
        if perturbation is not None:
            xn = xn + eps * eps * td * dt \
                + eps * np.sqrt(2.0 * ta * dt) * xi[1]
        if not np.all(np.isfinite(xn)):
            raise NumericalFailure("non-finite state encountered")

        # earliest target crossed within the step, by interpolation fraction
        frac = np.full(active.size, np.inf)
        which = np.full(active.size, TIMEOUT_CODE, dtype=np.int64)
        targets = np.concatenate([levels, hit_surf])
        for ti, lev in enumerate(targets):
            s0 = xa - lev
            s1 = xn - lev
            crossed = (s0 * s1 < 0) | ((s1 == 0) & (s0 != 0))
            if np.any(crossed):
                f = np.where(crossed, s0 / np.where(s0 - s1 != 0, s0 - s1, 1.0), np.inf)
                better = f < frac
                frac = np.where(better, f, frac)
                which = np.where(better, ti, which)

        # Kahan time update
        add = np.where(np.isfinite(frac), frac * dt, dt)
        y = add - t_comp[active]
        tt = t[active] + y
        t_comp[active] = (tt - t[active]) - y
        t[active] = tt
        steps[active] += 1
        total_steps += 1

        done = which >= 0
        if np.any(done):
            idx = active[done]
            code[idx] = which[done]
            ev_time[idx] = t[idx]
            ev_pos[idx] = targets[which[done]]
        x[active] = np.where(done, x[active], xn)  # stopped paths keep no update
        if stop.max_time is not None:
            timed = (~done) & (t[active] >= stop.max_time)
            if np.any(timed):
                idx = active[timed]
                ev_time[idx] = t[idx]
                ev_pos[idx] = x[idx]
                done = done | timed
        active = active[~done]
        if total_steps >= policy.max_steps:
            ev_time[active] = t[active]
            ev_pos[active] = x[active]
            break
    return code, ev_time, ev_pos, steps, n_lev


def run_batch(starts: np.ndarray, model: Model1D,
              perturbation: Optional[PerturbationSpec], stop: StopSpec,
              seed: int, policy: Optional[StepPolicy] = None,
              workers: int = 1):
    """Run many independent paths to their first stop event.

    Returns (codes, times, positions, steps): codes index ``stop.levels``
    first, then ``stop.surfaces`` (offset by len(levels)); -1 is a timeout.
    Results are bitwise independent of `workers`.
    """
    policy = policy or StepPolicy()
    starts = np.atleast_1d(np.asarray(starts, dtype=float))
    n = starts.size
    blocks = [(bi, starts[lo:lo + BLOCK_SIZE])
              for bi, lo in enumerate(range(0, n, BLOCK_SIZE))]

    def run_one(args):
        bi, x0 = args
        rng = np.random.Generator(np.random.Philox(key=[seed, bi]))
        return _run_block(x0, model, perturbation, stop, policy, rng)

    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, blocks))
    else:
        results = [run_one(b) for b in blocks]
    codes = np.concatenate([r[0] for r in results])
    times = np.concatenate([r[1] for r in results])
    poss = np.concatenate([r[2] for r in results])
    steps = np.concatenate([r[3] for r in results])
    return codes, times, poss, steps


def run_until(start: float, model: Model1D,
              perturbation: Optional[PerturbationSpec], stop: StopSpec,
              seed: int, path_index: int = 0,
              policy: Optional[StepPolicy] = None
              ) -> Tuple[PathEvent, float, int]:
    """Single trajectory to its first stop event (own stream per path index)."""
    policy = policy or StepPolicy()
    rng = np.random.Generator(np.random.Philox(key=[seed, path_index]))
    code, tv, pv, sv, n_lev = _run_block(np.array([float(start)]), model,
                                         perturbation, stop, policy, rng)
    c = int(code[0])
    if c == TIMEOUT_CODE:
        kind = "time_out"
        index = -1
    elif c < n_lev:
        kind, index = "hit_layer", c
    else:
        kind, index = "hit_surface", c - n_lev
    return PathEvent(kind, index, float(tv[0]), float(pv[0])), float(tv[0]), int(sv[0])


# ---------------------------------------------------------------------------
# occupation accumulation (unperturbed invariant measure)
# ---------------------------------------------------------------------------

def occupation_run(model: Model1D, surface_index: int, side: int,
                   bin_edges: np.ndarray, t_total: float, burn_in: float,
                   seed: int, n_replicas: int = 64,
                   policy: Optional[StepPolicy] = None):
    """Time spent per distance bin on one side of one surface (eps = 0).

    Runs `n_replicas` independent unperturbed trajectories for t_total each
    (after burn_in), attributing each accepted step's dt to the bin of its
    current distance-to-surface.  Returns (bin masses, total recorded time,
    number of core excursions observed).
    """
    policy = policy or StepPolicy(dist_floor=float(bin_edges[0]) / 4)
    s = model.surfaces[surface_index]
    rng = np.random.Generator(np.random.Philox(key=[seed, 0]))
    if side > 0:
        x = np.full(n_replicas, s + float(bin_edges[-1]))
    else:
        x = np.full(n_replicas, s - float(bin_edges[-1]))
    t = np.zeros(n_replicas)
    masses = np.zeros(len(bin_edges) - 1)
    recorded = 0.0
    excursions = 0
    inside_core = np.zeros(n_replicas, dtype=bool)
    horizon = burn_in + t_total
    while True:
        active = t < horizon
        if not np.any(active):
            break
        xa = x[active]
        a = model.diffusion(xa)
        b = model.drift(xa)
        m = _dist_to_surfaces(xa, np.asarray(model.surfaces))
        m = np.minimum(np.maximum(m, policy.dist_floor), 1.0)
        denom = 2.0 * a + np.abs(b) * m
        dt = np.clip(policy.theta_step ** 2 * m * m / np.maximum(denom, 1e-300),
                     policy.dt_min, policy.dt_max)
        xi = rng.standard_normal(xa.size)
        xn = xa + b * dt + np.sqrt(2.0 * a * dt) * xi
        if not np.all(np.isfinite(xn)):
            raise NumericalFailure("non-finite state encountered")
        measured = t[active] >= burn_in
        z = np.abs(xa - s) if side > 0 else np.abs(xa - s)
        onside = (xa - s) * side > 0
        sel = measured & onside
        if np.any(sel):
            idx = np.digitize(z[sel], bin_edges) - 1
            ok = (idx >= 0) & (idx < masses.size)
            np.add.at(masses, idx[ok], dt[sel][ok])
            recorded += float(dt[sel][ok].sum())
        # excursion counting: entries into the inner quarter of the bin range
        core_now = z < bin_edges[len(bin_edges) // 4]
        entered = core_now & ~inside_core[active] & measured
        excursions += int(entered.sum())
        inside_core[active] = core_now
        t[active] += dt
        x[active] = xn
    return masses, recorded, excursions


# ---------------------------------------------------------------------------
# 2-D band transitions
# ---------------------------------------------------------------------------

def _interp_periodic(grid_vals: np.ndarray, y: np.ndarray) -> np.ndarray:
    n = grid_vals.size
    pos = (y % 1.0) * n
    i0 = np.floor(pos).astype(int) % n
    w = pos - np.floor(pos)
    return (1 - w) * grid_vals[i0] + w * grid_vals[(i0 + 1) % n]


def run_band_2d(model: Model2DNormalForm, phi: np.ndarray, gamma: float,
                zeta: float, kappa1: float, kappa2: float, n_paths: int,
                seed: int, policy: Optional[StepPolicy] = None) -> np.ndarray:
    """Unperturbed band exits for the 2-D normal form.

    Paths start on the layer u = zeta (u = phi(y)^(1/gamma) z, y uniform) and
    run to u = kappa1 or u = kappa2; returns a boolean array marking outer
    hits.  No surface events can occur (the surface is inaccessible at
    eps = 0).
    """
    policy = policy or StepPolicy()
    if not 0 < kappa1 < zeta < kappa2:
        raise ValueError("need 0 < kappa1 < zeta < kappa2")
    rng = np.random.Generator(np.random.Philox(key=[seed, 0]))
    alpha_g = model.alpha_values()
    beta_g = model.beta_values()
    d_g = np.asarray(model.ly_diffusion, dtype=float)
    v_g = np.asarray(model.ly_drift, dtype=float)
    y = rng.random(n_paths)
    z = zeta * _interp_periodic(phi, y) ** (-1.0 / gamma)
    outer = np.zeros(n_paths, dtype=bool)
    active = np.arange(n_paths)
    a_max = float(alpha_g.max())
    b_max = float(np.abs(beta_g).max())
    d_max = float(d_g.max())
    v_max = float(np.abs(v_g).max())
    theta_y = min(policy.theta_step, 2.0 / model.n_y)
    dt_z = policy.theta_step ** 2 / (2 * a_max + b_max * policy.theta_step)
    dt_y = theta_y ** 2 / (2 * d_max + v_max * theta_y)
    dt = min(dt_z, dt_y, policy.dt_max)
    total_steps = 0
    while active.size and total_steps < policy.max_steps:
        ya = y[active]
        za = z[active]
        al = _interp_periodic(alpha_g, ya)
        be = _interp_periodic(beta_g, ya)
        dy = _interp_periodic(d_g, ya)
        vy = _interp_periodic(v_g, ya)
        xi = rng.standard_normal((2, active.size))
        zn = za * (1.0 + be * dt + np.sqrt(2.0 * al * dt) * xi[0])
        yn = ya + vy * dt + np.sqrt(2.0 * dy * dt) * xi[1]
        u = _interp_periodic(phi, yn) ** (1.0 / gamma) * zn
        hit_outer = u >= kappa2
        hit_inner = u <= kappa1
        done = hit_outer | hit_inner
        outer[active[hit_outer]] = True
        y[active] = yn
        z[active] = zn
        active = active[~done]
        total_steps += 1
    return outer
