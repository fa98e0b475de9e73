"""Command-line front door: config loading, subcommands, run manifests.

Exit codes: 0 success, 2 configuration/usage error, 3 flagged or spoiled
estimates (ran fine, but the asymptotic regime was not reached), 4 internal
consistency failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .hierarchy import (
    DomainTree,
    Edge,
    InternalConsistencyError,
    TreeError,
    metastable_profile,
    rho_invariance_check,
    scale_ladder,
    shipped_trees,
    window_index,
)
from .montecarlo import EstimateSpoiledError
from .model import (
    Model1D,
    Model2DNormalForm,
    ModelError,
    PerturbationSpec,
    build_model_1d,
    build_model_2d,
    model_hash,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FLAGGED = 3
EXIT_INTERNAL = 4

DEFAULT_SEED = 42


class ConfigError(ValueError):
    """Configuration file failed validation; message carries the location."""


# ---------------------------------------------------------------------------
# config loading
# ---------------------------------------------------------------------------

def _require_keys(obj: dict, required: Sequence[str], optional: Sequence[str],
                  where: str) -> None:
    for k in required:
        if k not in obj:
            raise ConfigError(f"{where}: missing required key {k!r}")
    for k in obj:
        if k not in required and k not in optional:
            raise ConfigError(f"{where.rstrip('/')}/{k}: unknown key")


def _number(obj, where: str) -> float:
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {type(obj).__name__}")
    return float(obj)


def load_model_config(path: str):
    """Load a model config; returns (model, PerturbationSpec or None)."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("/: expected an object")
    kind = cfg.get("kind")
    if kind == "one_d":
        _require_keys(cfg, ["kind", "surfaces", "bounds", "core_radius"],
                      ["confine_strength", "perturbation"], "/")
        surfaces = []
        if not isinstance(cfg["surfaces"], list):
            raise ConfigError("/surfaces: expected an array")
        for i, s in enumerate(cfg["surfaces"]):
            _require_keys(s, ["position", "alpha", "beta"], [], f"/surfaces/{i}")
            surfaces.append((_number(s["position"], f"/surfaces/{i}/position"),
                             _number(s["alpha"], f"/surfaces/{i}/alpha"),
                             _number(s["beta"], f"/surfaces/{i}/beta")))
        bounds = cfg["bounds"]
        if not (isinstance(bounds, list) and len(bounds) == 2):
            raise ConfigError("/bounds: expected [lo, hi]")
        try:
            model = build_model_1d(
                surfaces, (float(bounds[0]), float(bounds[1])),
                _number(cfg["core_radius"], "/core_radius"),
                confine_strength=_number(cfg.get("confine_strength", 5.0),
                                         "/confine_strength"))
        except ModelError as exc:
            raise ConfigError(f"/: {exc}") from exc
    elif kind == "normal_form_2d":
        _require_keys(cfg, ["kind", "alpha", "beta"],
                      ["n_y", "ly_diffusion", "ly_drift", "dy_coeff", "z_max",
                       "perturbation"], "/")

        def coeff(key, default):
            val = cfg.get(key, default)
            if isinstance(val, list):
                arr = np.asarray(val, dtype=float)
                return lambda y, arr=arr: np.interp(
                    y, np.arange(arr.size) / arr.size, arr, period=1.0)
            return _number(val, f"/{key}")

        try:
            model = build_model_2d(
                int(cfg.get("n_y", 128)), coeff("alpha", None),
                coeff("beta", None), coeff("ly_diffusion", 1.0),
                coeff("ly_drift", 0.0), coeff("dy_coeff", 0.0),
                z_max=_number(cfg.get("z_max", 1.0), "/z_max"))
        except ModelError as exc:
            raise ConfigError(f"/: {exc}") from exc
    else:
        raise ConfigError(f"/kind: expected 'one_d' or 'normal_form_2d', "
                          f"got {kind!r}")
    pert = None
    if "perturbation" in cfg:
        p = cfg["perturbation"]
        _require_keys(p, ["epsilon"], ["tilde_diffusion", "tilde_drift"],
                      "/perturbation")
        try:
            pert = PerturbationSpec(
                _number(p["epsilon"], "/perturbation/epsilon"),
                _number(p.get("tilde_diffusion", 1.0),
                        "/perturbation/tilde_diffusion"),
                _number(p.get("tilde_drift", 0.0), "/perturbation/tilde_drift"))
        except ModelError as exc:
            raise ConfigError(f"/perturbation: {exc}") from exc
    return model, pert


def load_tree_config(path: str) -> DomainTree:
    """Load a domain-tree config; gamma exponents are exact decimal strings."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    _require_keys(cfg, ["nodes", "edges"], [], "/")
    prefactors = {}
    for i, node in enumerate(cfg["nodes"]):
        _require_keys(node, ["id", "C"], [], f"/nodes/{i}")
        nid = node["id"]
        if not isinstance(nid, str):
            raise ConfigError(f"/nodes/{i}/id: expected a string")
        if nid in prefactors:
            raise ConfigError(f"/nodes/{i}/id: duplicate id {nid!r}")
        prefactors[nid] = _number(node["C"], f"/nodes/{i}/C")
    edges = []
    for i, e in enumerate(cfg["edges"]):
        _require_keys(e, ["u", "v", "gamma"], ["rho", "C_uv", "C_vu"],
                      f"/edges/{i}")
        g = e["gamma"]
        if not isinstance(g, str):
            raise ConfigError(f"/edges/{i}/gamma: expected a decimal string "
                              "(exact tie semantics)")
        try:
            gamma = Fraction(g)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"/edges/{i}/gamma: {exc}") from exc
        edges.append(Edge(e["u"], e["v"], gamma,
                          rho=_number(e.get("rho", 1.0), f"/edges/{i}/rho"),
                          c_uv=_number(e.get("C_uv", 1.0), f"/edges/{i}/C_uv"),
                          c_vu=_number(e.get("C_vu", 1.0), f"/edges/{i}/C_vu")))
    try:
        return DomainTree(prefactors, edges)
    except TreeError as exc:
        raise ConfigError(f"/edges: {exc}") from exc


def tree_digest(tree: DomainTree) -> str:
    payload = {
        "nodes": sorted(tree.node_prefactors.items()),
        "edges": sorted((e.u, e.v, str(e.gamma), e.rho, e.c_uv, e.c_vu)
                        for e in tree.edges),
    }
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

def _csv_bytes(header: Sequence[str], rows: Sequence[Sequence]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    return buf.getvalue().encode()


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode()


def emit_report(results: Dict[str, dict], out_dir: str,
                formats: Sequence[str], manifest_extra: dict) -> List[str]:
    """Write CSV/JSON artifacts plus a run manifest; returns the file list.

    ``results`` maps a base name to {"header": [...], "rows": [...],
    "summary": {...}}.  The manifest records digests of every emitted file.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory not writable: {exc}") from exc
    written: List[str] = []
    digests = {}
    for name, payload in results.items():
        if "csv" in formats and "header" in payload:
            data = _csv_bytes(payload["header"], payload.get("rows", []))
            p = out / f"{name}.csv"
            p.write_bytes(data)
            written.append(str(p))
            digests[p.name] = hashlib.sha256(data).hexdigest()
        if "json" in formats and "summary" in payload:
            data = _json_bytes(payload["summary"])
            p = out / f"{name}_summary.json" if "header" in payload else out / f"{name}.json"
            p.write_bytes(data)
            written.append(str(p))
            digests[p.name] = hashlib.sha256(data).hexdigest()
    manifest = dict(manifest_extra)
    manifest["tool_version"] = __version__
    manifest["outputs"] = digests
    p = out / "manifest.json"
    p.write_bytes(_json_bytes(manifest))
    written.append(str(p))
    return written


def _finish(args, results: Dict[str, dict], manifest_extra: dict) -> None:
    """Emit to --out if given, else print the JSON summaries to stdout."""
    if args.out:
        formats = args.format.split(",")
        manifest_extra["argv"] = getattr(args, "_argv", None)
        manifest_extra["started"] = getattr(args, "_started", None)
        manifest_extra["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        emit_report(results, args.out, formats, manifest_extra)
    else:
        summary = {name: payload.get("summary", {})
                   for name, payload in results.items()}
        json.dump(summary, sys.stdout, sort_keys=True, indent=2)
        sys.stdout.write("\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("METASTABLE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"METASTABLE_SEED: {exc}") from exc
    return DEFAULT_SEED


def _as_2d(model):
    if isinstance(model, Model2DNormalForm):
        return model
    if isinstance(model, Model1D) and len(model.surfaces) == 1:
        loc = model.locals_[0]
        return build_model_2d(128, loc.alpha, loc.beta)
    raise ConfigError("gamma subcommand needs a 2-D model or a single-surface "
                      "1-D model")


def cmd_gamma(args) -> int:
    from .exponents import solve_gamma

    model, _ = load_model_config(args.config)
    model2d = _as_2d(model)
    if args.grid and args.grid != model2d.n_y:
        model2d = build_model_2d(
            args.grid,
            lambda y, m=model2d: np.interp(y, m.y_grid, m.alpha_values(), period=1.0),
            lambda y, m=model2d: np.interp(y, m.y_grid, m.beta_values(), period=1.0),
            lambda y, m=model2d: np.interp(y, m.y_grid, m.ly_diffusion, period=1.0),
            lambda y, m=model2d: np.interp(y, m.y_grid, m.ly_drift, period=1.0),
            lambda y, m=model2d: np.interp(y, m.y_grid, m.dy_values(), period=1.0),
            z_max=model2d.z_max)
    sol = solve_gamma(model2d)
    results = {
        "gamma": {
            "header": ["y", "phi", "psi", "pi"],
            "rows": [(float(y), float(p), float(q), float(w))
                     for y, p, q, w in zip(model2d.y_grid, sol.phi, sol.psi, sol.pi)],
            "summary": {
                "gamma": sol.gamma,
                "avg_alpha": sol.avg_alpha,
                "avg_beta": sol.avg_beta,
                "residuals": list(sol.residuals),
                "N_y": sol.grid_size,
            },
        }
    }
    _finish(args, results, {"command": "gamma",
                            "config_digest": model_hash(model2d),
                            "seed": None})
    return EXIT_OK


def cmd_transition(args) -> int:
    from .montecarlo import estimate_transition, transition_formula
    from .exponents import gamma_constant

    model, pert = load_model_config(args.config)
    if not isinstance(model, Model1D) or not model.surfaces:
        raise ConfigError("transition needs a 1-D model with a surface")
    seed = _resolve_seed(args)
    if not args.eps and pert is None:
        pert_list = [None]
    else:
        pert_list = [PerturbationSpec(e) for e in args.eps] if args.eps else [pert]
    loc = model.locals_[0]
    gamma = gamma_constant(loc.alpha, loc.beta)
    rows = []
    flagged = False
    for pert_i in pert_list:
        for zeta in args.zeta:
            est = estimate_transition(model, pert_i, 0, zeta, args.kappa1,
                                      args.kappa2, args.paths, seed,
                                      workers=args.workers)
            formula = transition_formula(zeta, args.kappa1, args.kappa2, gamma)
            rows.append((zeta, est.point, est.ci_low, est.ci_high, formula))
            flagged |= est.flagged
    results = {"transition": {
        "header": ["zeta", "estimate", "ci_low", "ci_high", "formula_value"],
        "rows": rows,
        "summary": {"gamma": gamma, "n_paths": args.paths, "rows": len(rows)},
    }}
    _finish(args, results, {"command": "transition",
                            "config_digest": model_hash(model, pert),
                            "seed": seed})
    return EXIT_FLAGGED if flagged else EXIT_OK


def cmd_surface_hit(args) -> int:
    from .montecarlo import estimate_surface_hit

    model, pert = load_model_config(args.config)
    if pert is None:
        if not args.eps:
            raise ConfigError("surface-hit needs a perturbation (config or --eps)")
        pert = PerturbationSpec(args.eps[0])
    seed = _resolve_seed(args)
    slope, ests, rho = estimate_surface_hit(model, pert, 0, args.zeta,
                                            args.kappa, args.paths, seed)
    rows = [(z, ests[z].point, ests[z].ci_low, ests[z].ci_high,
             rho[z].point) for z in args.zeta]
    summary = {"n_paths": args.paths}
    if slope is not None:
        summary["slope"] = slope.slope
        summary["slope_stderr"] = slope.slope_stderr
        summary["r_squared"] = slope.r_squared
    results = {"surface_hit": {
        "header": ["zeta", "p_hat", "ci_low", "ci_high", "rho_hat"],
        "rows": rows, "summary": summary,
    }}
    _finish(args, results, {"command": "surface-hit",
                            "config_digest": model_hash(model, pert),
                            "seed": seed})
    return EXIT_OK


def cmd_density(args) -> int:
    from .montecarlo import occupation_histogram

    model, _ = load_model_config(args.config)
    seed = _resolve_seed(args)
    res = occupation_histogram(model, 0, +1, args.zlo, args.kappa, args.bins,
                               args.time, args.burn_in, seed)
    rows = [(float(a), float(b), float(m), float(d))
            for a, b, m, d in zip(res.bin_edges[:-1], res.bin_edges[1:],
                                  res.masses, res.density)]
    results = {"density": {
        "header": ["z_lo", "z_hi", "mass", "density"],
        "rows": rows,
        "summary": {"slope": res.slope.slope,
                    "slope_stderr": res.slope.slope_stderr,
                    "excursions": res.excursions,
                    "total_time": res.total_time},
    }}
    _finish(args, results, {"command": "density",
                            "config_digest": model_hash(model), "seed": seed})
    return EXIT_FLAGGED if res.flagged else EXIT_OK


def cmd_exit_stats(args) -> int:
    from .montecarlo import EstimateSpoiledError, estimate_exit_stats

    model, pert = load_model_config(args.config)
    seed = _resolve_seed(args)
    try:
        res = estimate_exit_stats(model, pert, args.start,
                                  list(model.surfaces), args.paths, seed,
                                  max_time=args.max_time)
    except EstimateSpoiledError as exc:
        print(f"spoiled: {exc}", file=sys.stderr)
        return EXIT_FLAGGED
    rows = [(ti, model.surfaces[ti], cell.probability.point,
             cell.mean_time.point, cell.ks_to_exponential)
            for ti, cell in sorted(res.per_target.items())]
    results = {"exit_stats": {
        "header": ["target", "surface", "probability", "mean_time", "ks"],
        "rows": rows,
        "summary": {"mean": res.mean.point,
                    "mean_ci": [res.mean.ci_low, res.mean.ci_high],
                    "second_moment": res.second_moment.point,
                    "moment_ratio": res.moment_ratio,
                    "ks_to_exponential": res.ks_to_exponential,
                    "n_timeouts": res.n_timeouts},
    }}
    _finish(args, results, {"command": "exit-stats",
                            "config_digest": model_hash(model, pert),
                            "seed": seed})
    return EXIT_OK


def cmd_exit_split(args) -> int:
    from .montecarlo import estimate_surface_exit_split

    model, pert = load_model_config(args.config)
    if pert is None:
        raise ConfigError("exit-split needs a perturbation in the config")
    seed = _resolve_seed(args)
    up, decision = estimate_surface_exit_split(model, pert, 0, args.kappa0,
                                               args.paths, seed)
    results = {"exit_split": {
        "header": ["p_up", "ci_low", "ci_high", "mean_decision_time"],
        "rows": [(up.point, up.ci_low, up.ci_high, decision.point)],
        "summary": {"p_up": up.point, "ci": [up.ci_low, up.ci_high],
                    "mean_decision_time": decision.point},
    }}
    _finish(args, results, {"command": "exit-split",
                            "config_digest": model_hash(model, pert),
                            "seed": seed})
    return EXIT_FLAGGED if up.flagged else EXIT_OK


def cmd_fit_constants(args) -> int:
    from .montecarlo import fit_edge_constants

    model, _ = load_model_config(args.config)
    if not args.eps:
        raise ConfigError("fit-constants needs at least one --eps")
    seed = _resolve_seed(args)
    res = fit_edge_constants(model, args.eps, args.paths, seed,
                             max_time=args.max_time)
    rows = []
    for (i, s), per_eps in sorted(res.splits.items()):
        for eps, est in sorted(per_eps.items()):
            rows.append((i, s, eps, est.point, est.ci_low, est.ci_high))
    summary = {
        "theta_hat": {str(i): {str(e): est.point for e, est in d.items()}
                      for i, d in res.theta_hat.items()},
        "rho_ratio": {str(k): [v.point, v.ci_low, v.ci_high]
                      for k, v in res.rho_ratio.items()},
        "flagged_edges": [list(e) for e in res.flagged_edges],
    }
    results = {"fit_constants": {
        "header": ["domain", "surface", "epsilon", "split", "ci_low", "ci_high"],
        "rows": rows, "summary": summary,
    }}
    _finish(args, results, {"command": "fit-constants",
                            "config_digest": model_hash(model), "seed": seed})
    return EXIT_FLAGGED if res.flagged_edges else EXIT_OK


def cmd_game(args) -> int:
    from .game import GameConfig, HoldingLaw, verify_limits

    seed = _resolve_seed(args)
    eps_list = sorted(args.eps or [1e-2, 1e-3], reverse=True)
    configs = [GameConfig((0.5, 0.5), (e, 0.2 * e),
                          HoldingLaw("exponential", 1.0),
                          HoldingLaw("constant", 0.0), e)
               for e in eps_list]
    cells = verify_limits(configs, args.paths, seed)
    rows = [(c.epsilon, c.prize_type, c.mean_ratio, c.ks, c.n_wins)
            for c in cells.values()]
    flagged = any(c.flagged for c in cells.values())
    results = {"game": {
        "header": ["epsilon", "type", "mean_ratio", "ks", "n_wins"],
        "rows": rows,
        "summary": {"n_replications": args.paths,
                    "cells": {f"{c.epsilon}/{c.prize_type}":
                              {"mean_ratio": c.mean_ratio, "ks": c.ks}
                              for c in cells.values()}},
    }}
    _finish(args, results, {"command": "game", "config_digest": None,
                            "seed": seed})
    return EXIT_FLAGGED if flagged else EXIT_OK


def _profile_rows(tree: DomainTree, start: str):
    prof = metastable_profile(tree, start)
    nodes = sorted(tree.nodes)
    rows = []
    for n, window in enumerate(prof.windows, start=1):
        hi = prof.scales[n - 1]
        lo = prof.scales[n]
        rows.append((start, n, "-inf" if lo is None else str(lo), str(hi),
                     *[window.get(k, 0.0) for k in nodes]))
    return nodes, rows


def cmd_hierarchy(args) -> int:
    tree = load_tree_config(args.tree)
    starts = [args.start] if args.start else sorted(tree.nodes)
    for s in starts:
        if s not in tree.node_prefactors:
            raise ConfigError(f"--start: unknown domain {s!r}")
    all_rows = []
    nodes = sorted(tree.nodes)
    for s in starts:
        _, rows = _profile_rows(tree, s)
        all_rows.extend(rows)
    results = {"hierarchy": {
        "header": ["start", "window", "gamma_lo", "gamma_hi", *nodes],
        "rows": all_rows,
        "summary": {"nodes": nodes, "n_rows": len(all_rows)},
    }}
    _finish(args, results, {"command": "hierarchy",
                            "config_digest": tree_digest(tree), "seed": None})
    return EXIT_OK


def cmd_semimarkov(args) -> int:
    from .semimarkov import SkeletonRangeError, evaluate_skeleton, simulate_skeleton

    tree = load_tree_config(args.tree)
    if args.start not in tree.node_prefactors:
        raise ConfigError(f"--start: unknown domain {args.start!r}")
    eps = args.eps[0] if args.eps else 1e-3
    seed = _resolve_seed(args)
    try:
        law = evaluate_skeleton(tree, eps)
    except SkeletonRangeError as exc:
        raise ConfigError(str(exc)) from exc
    horizon = eps ** args.tau if args.tau is not None else args.horizon
    if horizon is None:
        raise ConfigError("semimarkov needs --tau or --horizon")
    sample = simulate_skeleton(law, args.start, horizon, args.paths, seed)
    prof = metastable_profile(tree, args.start)
    if args.tau is not None:
        n = window_index(Fraction(str(args.tau)), list(prof.scales))
        expected = prof.windows[n - 1]
    else:
        expected = {}
    rows = [(k, float(sample.freq[i]), float(sample.ci_low[i]),
             float(sample.ci_high[i]),
             expected.get(k, 0.0) if expected else "")
            for i, k in enumerate(sample.nodes)]
    results = {"semimarkov": {
        "header": ["domain", "frequency", "ci_low", "ci_high", "profile_value"],
        "rows": rows,
        "summary": {"epsilon": eps, "horizon": horizon,
                    "frequencies": {k: float(f) for k, f
                                    in zip(sample.nodes, sample.freq)}},
    }}
    _finish(args, results, {"command": "semimarkov",
                            "config_digest": tree_digest(tree), "seed": seed})
    return EXIT_OK


def cmd_validate(args) -> int:
    from .exponents import solve_gamma
    from .model import constant_model_2d, single_surface_model
    from .montecarlo import estimate_transition, transition_formula
    from .semimarkov import evaluate_skeleton, simulate_skeleton

    if args.suite != "quick":
        raise ConfigError(f"unknown suite {args.suite!r}")
    seed = _resolve_seed(args)
    rows = []
    summary = {}
    # deterministic half: exponents and hierarchy
    for alpha, beta in ((1.0, 2.0), (1.0, 3.0)):
        sol = solve_gamma(constant_model_2d(alpha, beta))
        rows.append(("gamma_constant", f"{alpha}/{beta}", sol.gamma))
        summary[f"gamma_{alpha}_{beta}"] = sol.gamma
    for name, tree in sorted(shipped_trees().items()):
        dev = rho_invariance_check(tree, trials=10, seed=seed)
        rows.append(("rho_invariance", name, dev))
        summary[f"rho_invariance_{name}"] = dev
        for start in sorted(tree.nodes):
            _, prows = _profile_rows(tree, start)
            for r in prows:
                rows.append(("profile", f"{name}/{start}/w{r[1]}",
                             ",".join(f"{v:.12g}" for v in r[4:])))
    # stochastic half: skeleton endpoints and one SDE transition estimate
    tree = shipped_trees()["chain3"]
    law = evaluate_skeleton(tree, 1e-3)
    sample = simulate_skeleton(law, "1", 1e-3 ** -1.5, 20000, seed)
    for k, f in zip(sample.nodes, sample.freq):
        rows.append(("skeleton_chain3", k, float(f)))
    summary["skeleton_chain3"] = {k: float(f)
                                  for k, f in zip(sample.nodes, sample.freq)}
    model = single_surface_model(1.0, 2.0)
    est = estimate_transition(model, None, 0, 0.2, 0.1, 0.4, 20000, seed,
                              workers=args.workers)
    rows.append(("transition", "zeta=0.2", est.point))
    summary["transition_zeta_0.2"] = {
        "estimate": est.point,
        "formula": transition_formula(0.2, 0.1, 0.4, -1.0),
    }
    results = {"results": {
        "header": ["check", "case", "value"],
        "rows": rows,
        "summary": summary,
    }}
    _finish(args, results, {"command": "validate", "config_digest": None,
                            "seed": seed, "workers": args.workers})
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metastable",
        description="Exponents, metastable profiles, and Monte Carlo checks "
                    "for diffusions with repelling invariant surfaces.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=False, tree=False):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--paths", type=int, default=10000)
        p.add_argument("--eps", type=float, action="append", default=[])
        p.add_argument("--out", type=str, default=None)
        p.add_argument("--format", type=str, default="csv,json")
        p.add_argument("--workers", type=int, default=1)
        if config:
            p.add_argument("--config", type=str, required=True)
        if tree:
            p.add_argument("--tree", type=str, required=True)

    p = sub.add_parser("gamma", help="solve the surface exponent problem")
    common(p, config=True)
    p.add_argument("--grid", type=int, default=None)
    p.set_defaults(func=cmd_gamma)

    p = sub.add_parser("transition", help="band transition probabilities")
    common(p, config=True)
    p.add_argument("--zeta", type=float, action="append", required=True)
    p.add_argument("--kappa1", type=float, required=True)
    p.add_argument("--kappa2", type=float, required=True)
    p.set_defaults(func=cmd_transition)

    p = sub.add_parser("surface-hit", help="surface-hit probability sweep")
    common(p, config=True)
    p.add_argument("--zeta", type=float, action="append", required=True)
    p.add_argument("--kappa", type=float, required=True)
    p.set_defaults(func=cmd_surface_hit)

    p = sub.add_parser("density", help="near-surface occupation histogram")
    common(p, config=True)
    p.add_argument("--zlo", type=float, default=0.01)
    p.add_argument("--kappa", type=float, default=0.4)
    p.add_argument("--bins", type=int, default=12)
    p.add_argument("--time", type=float, default=800.0)
    p.add_argument("--burn-in", type=float, default=20.0)
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("exit-stats", help="domain exit times and splits")
    common(p, config=True)
    p.add_argument("--start", type=float, required=True)
    p.add_argument("--max-time", type=float, default=None)
    p.set_defaults(func=cmd_exit_stats)

    p = sub.add_parser("exit-split", help="two-sided exit split from a surface")
    common(p, config=True)
    p.add_argument("--kappa0", type=float, default=0.4)
    p.set_defaults(func=cmd_exit_split)

    p = sub.add_parser("fit-constants", help="per-edge constants from exits")
    common(p, config=True)
    p.add_argument("--max-time", type=float, default=None)
    p.set_defaults(func=cmd_fit_constants)

    p = sub.add_parser("game", help="die-and-coin renewal game limits")
    common(p)
    p.set_defaults(func=cmd_game)

    p = sub.add_parser("hierarchy", help="scale ladder and metastable profile")
    common(p, tree=True)
    p.add_argument("--start", type=str, default=None)
    p.set_defaults(func=cmd_hierarchy)

    p = sub.add_parser("semimarkov", help="skeleton-process endpoint law")
    common(p, tree=True)
    p.add_argument("--start", type=str, required=True)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--horizon", type=float, default=None)
    p.set_defaults(func=cmd_semimarkov)

    p = sub.add_parser("validate", help="deterministic validation battery")
    common(p)
    p.add_argument("--suite", type=str, default="quick")
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    args._argv = list(argv) if argv is not None else sys.argv[1:]
    args._started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TreeError, ModelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EstimateSpoiledError as exc:
        print(f"spoiled: {exc}", file=sys.stderr)
        return EXIT_FLAGGED
    except InternalConsistencyError as exc:
        print(f"internal consistency error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
