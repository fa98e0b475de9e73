"""Desk-scale diffusion models with degenerate repelling surfaces.

A 1-D model is a diffusion on an interval whose coefficients vanish
quadratically (diffusion) and linearly (drift) at each surface point, are
exactly homogeneous inside a core radius, blend smoothly to constant bulk
coefficients, and carry an inward confining drift near the boundary.  The
2-D normal form lives on (circle) x (distance) and exists to exercise
y-dependent coefficients.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

BLEND_FACTOR = 0.5      # blend band width as a fraction of the core radius
CONFINE_START = 0.85    # confining ramp turns on at this fraction of half-width
CONFINE_FULL = 0.90     # ...and is fully active here (outer 10% confined)


class ModelError(ValueError):
    """Invalid model construction parameters."""


@dataclass(frozen=True)
class PerturbationSpec:
    """Additive small-noise perturbation of strength epsilon."""

    epsilon: float
    tilde_diffusion: float = 1.0
    tilde_drift: float = 0.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ModelError(f"epsilon must be positive, got {self.epsilon}")
        if not self.tilde_diffusion > 0:
            raise ModelError("perturbing diffusion must be non-degenerate")


@dataclass(frozen=True)
class SurfaceLocal:
    """Local normal-form coefficients at one surface.

    Scalars in 1-D; the optional *_fn arrays carry y-dependence on the 2-D
    surface grid.  dy_coeff is the first-order surface-operator coefficient,
    identically zero in 1-D.
    """

    alpha: float
    beta: float
    dy_coeff: Optional[np.ndarray] = None
    alpha_fn: Optional[np.ndarray] = None
    beta_fn: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.alpha_fn is not None:
            if np.any(np.asarray(self.alpha_fn) <= 0):
                raise ModelError("alpha must be positive everywhere")
        elif not self.alpha > 0:
            raise ModelError(f"alpha must be positive, got {self.alpha}")


def _hermite(t: np.ndarray, v0, m0, v1, m1, dx) -> np.ndarray:
    """Cubic Hermite on t in [0,1] with endpoint values and derivatives."""
    t2 = t * t
    t3 = t2 * t
    return ((2 * t3 - 3 * t2 + 1) * v0 + (t3 - 2 * t2 + t) * dx * m0
            + (-2 * t3 + 3 * t2) * v1 + (t3 - t2) * dx * m1)


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


@dataclass(frozen=True)
class Model1D:
    """Assembled 1-D model; drift/diffusion are vectorized callables.

    ``diffusion`` returns the generator coefficient a(x) (one half the
    squared noise amplitude), so one Euler step uses sqrt(2 a) noise.
    """

    surfaces: Tuple[float, ...]
    locals_: Tuple[SurfaceLocal, ...]
    bounds: Tuple[float, float]
    core_radius: float
    confine_strength: float
    drift: Callable[[np.ndarray], np.ndarray] = field(compare=False)
    diffusion: Callable[[np.ndarray], np.ndarray] = field(compare=False)

    @property
    def kind(self) -> str:
        return "one_d"

    def surface_array(self) -> np.ndarray:
        return np.asarray(self.surfaces)

    def config_dict(self) -> dict:
        return {
            "kind": "one_d",
            "surfaces": [
                {"position": s, "alpha": loc.alpha, "beta": loc.beta}
                for s, loc in zip(self.surfaces, self.locals_)
            ],
            "bounds": list(self.bounds),
            "core_radius": self.core_radius,
            "confine_strength": self.confine_strength,
        }


def build_model_1d(surface_specs: Sequence[Tuple[float, float, float]],
                   bounds: Tuple[float, float],
                   core_radius: float,
                   confine_strength: float = 5.0,
                   bulk_diffusion: Optional[float] = None) -> Model1D:
    """Assemble a Model1D from (position, alpha, beta) surface triples.

    Coefficients are exact normal forms within the core radius, cubic-Hermite
    blended over a band of half the core radius to per-domain constants
    (diffusion) and zero (drift), with a smoothly ramped confining drift on
    the outer band of the domain.  The result is validated against the
    degeneracy, ellipticity, and confinement invariants before returning.
    """
    lo, hi = float(bounds[0]), float(bounds[1])
    if not lo < hi:
        raise ModelError(f"bounds must be increasing, got {bounds}")
    z0 = float(core_radius)
    if not z0 > 0:
        raise ModelError("core radius must be positive")
    if not confine_strength > 0:
        raise ModelError("confine strength must be positive")
    positions = [float(s[0]) for s in surface_specs]
    if any(b <= a for a, b in zip(positions, positions[1:])):
        raise ModelError("surface positions must be strictly increasing")
    for (pa, *_), (pb, *_) in zip(surface_specs, surface_specs[1:]):
        if pb - pa <= 2 * z0:
            raise ModelError(
                f"cores overlap: surfaces at {pa} and {pb} need spacing > {2 * z0}")
    locs = []
    for pos, alpha, beta in surface_specs:
        locs.append(SurfaceLocal(float(alpha), float(beta)))
    outer = z0 * (1.0 + BLEND_FACTOR)
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    for pos in positions:
        if abs(pos - mid) + outer > CONFINE_START * half:
            raise ModelError(
                f"surface at {pos} too close to the bounds: its blend band "
                "reaches the confining region")
    if positions and not (lo < positions[0] and positions[-1] < hi):
        raise ModelError("surfaces must lie inside the bounds")

    pos_arr = np.asarray(positions)
    alpha_arr = np.array([l.alpha for l in locs])
    beta_arr = np.array([l.beta for l in locs])
    # per-domain bulk diffusion: the smaller adjacent core-edge value, so the
    # blend never dips below its right endpoint (cubic Hermite with zero
    # target slope is bounded below by the target value)
    core_edge = alpha_arr * z0 * z0 if positions else np.array([])
    if bulk_diffusion is not None:
        a_bulk_default = float(bulk_diffusion)
    else:
        a_bulk_default = float(core_edge.min()) if positions else 1.0
    n_dom = len(positions) + 1
    a_bulk = np.empty(n_dom)
    for d in range(n_dom):
        adjacent = []
        if d > 0:
            adjacent.append(core_edge[d - 1])
        if d < len(positions):
            adjacent.append(core_edge[d])
        a_bulk[d] = min(adjacent) if adjacent else a_bulk_default

    def _domain_index(x: np.ndarray) -> np.ndarray:
        return np.searchsorted(pos_arr, x) if positions else np.zeros(np.shape(x), int)

    def diffusion(x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        out = a_bulk[_domain_index(x)].copy()
        for k, pos in enumerate(positions):
            z = x - pos
            az = np.abs(z)
            core = az <= z0
            out[core] = alpha_arr[k] * z[core] ** 2
            band = (az > z0) & (az < outer)
            if np.any(band):
                side = np.sign(z[band])
                tgt = np.where(side > 0, a_bulk[k + 1], a_bulk[k])
                t = (az[band] - z0) / (outer - z0)
                out[band] = _hermite(t, alpha_arr[k] * z0 ** 2,
                                     2 * alpha_arr[k] * z0, tgt, 0.0, outer - z0)
        return out[0] if scalar else out

    def drift(x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        out = np.zeros_like(x)
        for k, pos in enumerate(positions):
            z = x - pos
            az = np.abs(z)
            core = az <= z0
            out[core] = beta_arr[k] * z[core]
            band = (az > z0) & (az < outer)
            if np.any(band):
                side = np.sign(z[band])
                t = (az[band] - z0) / (outer - z0)
                out[band] = side * _hermite(t, beta_arr[k] * z0, beta_arr[k],
                                            0.0, 0.0, outer - z0)
        u = (x - mid) / half
        ramp = _smoothstep((np.abs(u) - CONFINE_START) / (CONFINE_FULL - CONFINE_START))
        out = out - confine_strength * (x - mid) * ramp
        return out[0] if scalar else out

    model = Model1D(tuple(positions), tuple(locs), (lo, hi), z0,
                    float(confine_strength), drift, diffusion)
    _validate_model_1d(model)
    return model


def _validate_model_1d(model: Model1D, n_grid: int = 4001) -> None:
    """Check the structural invariants; raise on any violation."""
    lo, hi = model.bounds
    h = 1e-6 * (hi - lo)
    a, b = model.diffusion, model.drift
    for pos, loc in zip(model.surfaces, model.locals_):
        checks = {
            "a(s)": (float(a(pos)), 0.0),
            "a'(s)": ((float(a(pos + h)) - float(a(pos - h))) / (2 * h), 0.0),
            "a''(s)": ((float(a(pos + h)) - 2 * float(a(pos)) + float(a(pos - h))) / h ** 2,
                       2 * loc.alpha),
            "b(s)": (float(b(pos)), 0.0),
            "b'(s)": ((float(b(pos + h)) - float(b(pos - h))) / (2 * h), loc.beta),
        }
        for name, (got, want) in checks.items():
            scale = max(1.0, abs(want))
            if abs(got - want) > 1e-5 * scale:
                raise ModelError(f"normal-form check {name} failed at surface "
                                 f"{pos}: got {got}, want {want}")
    # uniform ellipticity away from the surfaces (Assumption (c) analogue)
    x = np.linspace(lo, hi, n_grid)
    if model.surfaces:
        dist = np.min(np.abs(x[:, None] - model.surface_array()[None, :]), axis=1)
    else:
        dist = np.ones_like(x)
    floor = np.minimum(dist ** 2, 1.0)
    ratio = a(x) / np.maximum(floor, 1e-300)
    inside = floor > 0
    if np.any(a(x) < 0) or float(np.min(ratio[inside])) <= 0:
        raise ModelError("diffusion coefficient violates the ellipticity floor")
    # confinement on the outer 10%
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    outer10 = np.abs(x - mid) > CONFINE_FULL * half
    if np.any(model.drift(x[outer10]) * np.sign(x[outer10] - mid) >= 0):
        raise ModelError("drift fails to point inward on the outer 10%")


# ---------------------------------------------------------------------------
# 2-D normal form on (circle) x (signed distance)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Model2DNormalForm:
    """Normal form around a single invariant circle.

    The y coordinate diffuses on the unit circle under L_y; the z coordinate
    follows the degenerate normal form with y-dependent alpha, beta.  The
    remainder operator is identically zero by construction, and the simulated
    dynamics carry no first-order y-z coupling (dy_coeff enters only the
    exponent solver).
    """

    n_y: int
    y_grid: np.ndarray = field(compare=False)
    ly_diffusion: np.ndarray = field(compare=False)
    ly_drift: np.ndarray = field(compare=False)
    local: SurfaceLocal = field(compare=False)
    z_max: float = 1.0

    def __post_init__(self):
        if np.any(self.ly_diffusion <= 0):
            raise ModelError("L_y diffusion must be positive everywhere")
        for arr in (self.ly_diffusion, self.ly_drift, self.local.alpha_fn,
                    self.local.beta_fn):
            if arr is not None and len(arr) != self.n_y:
                raise ModelError("coefficient arrays must match the grid size")

    @property
    def kind(self) -> str:
        return "normal_form_2d"

    def alpha_values(self) -> np.ndarray:
        if self.local.alpha_fn is not None:
            return np.asarray(self.local.alpha_fn, dtype=float)
        return np.full(self.n_y, self.local.alpha)

    def beta_values(self) -> np.ndarray:
        if self.local.beta_fn is not None:
            return np.asarray(self.local.beta_fn, dtype=float)
        return np.full(self.n_y, self.local.beta)

    def dy_values(self) -> np.ndarray:
        if self.local.dy_coeff is not None:
            return np.asarray(self.local.dy_coeff, dtype=float)
        return np.zeros(self.n_y)

    def config_dict(self) -> dict:
        return {
            "kind": "normal_form_2d",
            "n_y": self.n_y,
            "ly_diffusion": np.asarray(self.ly_diffusion).tolist(),
            "ly_drift": np.asarray(self.ly_drift).tolist(),
            "alpha": self.alpha_values().tolist(),
            "beta": self.beta_values().tolist(),
            "dy_coeff": self.dy_values().tolist(),
            "z_max": self.z_max,
        }


def build_model_2d(n_y: int,
                   alpha: Callable[[np.ndarray], np.ndarray] | float,
                   beta: Callable[[np.ndarray], np.ndarray] | float,
                   ly_diffusion: Callable[[np.ndarray], np.ndarray] | float = 1.0,
                   ly_drift: Callable[[np.ndarray], np.ndarray] | float = 0.0,
                   dy_coeff: Callable[[np.ndarray], np.ndarray] | float = 0.0,
                   z_max: float = 1.0) -> Model2DNormalForm:
    """Sample coefficient functions on the equispaced circle grid."""
    if n_y < 8:
        raise ModelError("grid too coarse; need at least 8 points")
    y = np.arange(n_y) / n_y

    def ev(f):
        return np.asarray(f(y), dtype=float) if callable(f) else np.full(n_y, float(f))

    a = ev(alpha)
    b = ev(beta)
    local = SurfaceLocal(float(a.mean()), float(b.mean()),
                         dy_coeff=ev(dy_coeff), alpha_fn=a, beta_fn=b)
    return Model2DNormalForm(n_y, y, ev(ly_diffusion), ev(ly_drift), local,
                             float(z_max))


def constant_model_2d(alpha: float, beta: float, n_y: int = 64) -> Model2DNormalForm:
    return build_model_2d(n_y, alpha, beta)


# ---------------------------------------------------------------------------
# Stratonovich conversion and model digests
# ---------------------------------------------------------------------------

def strat_to_ito(strat_drift: Callable[[np.ndarray], np.ndarray],
                 sigma: Callable[[np.ndarray], np.ndarray],
                 sigma_prime: Optional[Callable[[np.ndarray], np.ndarray]] = None
                 ) -> Callable[[np.ndarray], np.ndarray]:
    """1-D Stratonovich-to-Ito drift conversion: b + (1/2) sigma' sigma."""
    if sigma_prime is None:
        raise ModelError("sigma derivative required for Stratonovich conversion")

    def ito_drift(x):
        return strat_drift(x) + 0.5 * sigma_prime(x) * sigma(x)

    return ito_drift


def model_hash(model, perturbation: Optional[PerturbationSpec] = None) -> str:
    """Stable digest of the model (and perturbation) configuration.

    Canonical JSON serialization (sorted keys, fixed float formatting), so
    field order never matters and any coefficient change alters the digest.
    """
    payload = {"model": model.config_dict()}
    if perturbation is not None:
        payload["perturbation"] = {
            "epsilon": perturbation.epsilon,
            "tilde_diffusion": perturbation.tilde_diffusion,
            "tilde_drift": perturbation.tilde_drift,
        }
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# canonical desk-scale models
# ---------------------------------------------------------------------------

def single_surface_model(alpha: float = 1.0, beta: float = 2.0,
                         core_radius: float = 0.5) -> Model1D:
    """One surface at the origin with a wide exact core for layer studies."""
    half = max(4.0 * core_radius, 2.0)
    return build_model_1d([(0.0, alpha, beta)], bounds=(-half, half),
                          core_radius=core_radius)


def three_domain_model() -> Model1D:
    """Two-surface chain: edge exponents -1 (left) and -2 (right)."""
    return build_model_1d([(-0.5, 1.0, 2.0), (0.5, 1.0, 3.0)],
                          bounds=(-1.6, 1.6), core_radius=0.2)
