"""Command line front end for the solvers and samplers.

One subcommand per workflow. Every run writes data files (CSV and/or a
summary JSON, controlled by --format) plus a <command>_meta.json carrying
wall-clock and version information. Data files are deterministic: re-running
with the same config and seed reproduces them byte for byte, which is why
timestamps live only in the metadata file.

Exit codes: 0 success, 1 rejected input (bad flags, malformed config,
statistics refused), 2 numerical refusal (resolution or solver failure),
3 internal consistency failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .cell import (effective_conductivity, translation_sensitivity,
                   two_scale_compare, v_curve)
from .core import classify_regime, iterate_core
from .errors import (ConfigurationError, ConsistencyError, EddyLabError,
                     ResolutionError, SolverError)
from .exitpde import disk, field_rows, mean_exit_time, solve_exit_time, square
from .fields import (Eddy, FlowSpec, as_view, cellular_eddy, figure1_eddy,
                     flow_from_json, implosive_eddy, self_similar_flow,
                     shear_eddy, single_scale_flow, validate_flow, zero_eddy,
                     zero_flow)
from .io import write_csv, write_json, write_metadata
from .mc import (SimConfig, flow_delta, sample_rows, sample_summary,
                 simulate_exit, simulate_pair)
from .tensors import SPDTensor, identity

_OUT_ENV = "EDDYLAB_OUT"

_EDDY_MAKERS = {
    "cellular": cellular_eddy,
    "implosive": implosive_eddy,
    "shear": shear_eddy,
    "zero": zero_eddy,
    "figure1": figure1_eddy,
}


class _ArgumentParser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; here bad flags are a user
    # error (code 1), so surface them as ConfigurationError instead.
    def error(self, message):
        raise ConfigurationError(message)


# ---------------------------------------------------------------------------
# config parsing


def _load_config(path: str) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path!r}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path!r} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError("config must be a JSON object")
    return doc


def _check_keys(doc: dict, allowed, where: str) -> None:
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigurationError(f"unknown key {unknown[0]!r} in {where}")


def _require(doc: dict, key: str, where: str):
    if doc.get(key) is None:
        raise ConfigurationError(f"{where} needs {key!r}")
    return doc[key]


def _real(value, where: str, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"{where} must be a number")
    v = float(value)
    if not math.isfinite(v):
        raise ConfigurationError(f"{where} must be finite")
    if positive and v <= 0:
        raise ConfigurationError(f"{where} must be positive, got {v}")
    return v


def _integer(value, where: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigurationError(f"{where} must be an integer")
    if minimum is not None and value < minimum:
        raise ConfigurationError(f"{where} must be >= {minimum}, got {value}")
    return value


def _tensor_from(doc, where: str = "tensor") -> SPDTensor:
    if isinstance(doc, (int, float)) and not isinstance(doc, bool):
        return identity(_real(doc, where, positive=True))
    if isinstance(doc, dict):
        _check_keys(doc, {"a11", "a12", "a22"}, where)
        a11 = _real(_require(doc, "a11", where), f"{where}.a11")
        a12 = _real(doc.get("a12", 0.0), f"{where}.a12")
        a22 = _real(_require(doc, "a22", where), f"{where}.a22")
        return SPDTensor(a11, a12, a22)
    raise ConfigurationError(
        f"{where} must be a number (isotropic) or an object with a11, a12, a22")


def _eddy_from(doc, where: str = "eddy") -> Eddy:
    if isinstance(doc, str):
        maker = _EDDY_MAKERS.get(doc)
        if maker is None:
            raise ConfigurationError(
                f"{where}: unknown eddy {doc!r}, expected one of {sorted(_EDDY_MAKERS)}")
        return maker()
    if isinstance(doc, dict):
        _check_keys(doc, {"kind", "n", "data"}, where)
        kind = _require(doc, "kind", where)
        if kind == "grid":
            data = _require(doc, "data", where)
            n = _integer(_require(doc, "n", where), f"{where}.n", minimum=2)
            arr = np.asarray(data, dtype=float)
            if arr.size != n * n:
                raise ConfigurationError(
                    f"{where}: grid data has {arr.size} samples, expected {n * n}")
            return Eddy(arr.reshape(n, n), kind="grid")
        maker = _EDDY_MAKERS.get(kind)
        if maker is None:
            raise ConfigurationError(f"{where}: unknown eddy kind {kind!r}")
        if doc.get("data") is not None:
            raise ConfigurationError(f"{where}: 'data' only applies to kind 'grid'")
        if doc.get("n") is not None:
            return maker(_integer(doc["n"], f"{where}.n", minimum=2))
        return maker()
    raise ConfigurationError(f"{where} must be an eddy name or an object")


def _flow_from(doc, where: str = "flow") -> FlowSpec:
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{where} must be a JSON object")
    if "scales" in doc:
        return flow_from_json(doc)
    _check_keys(doc, {"kappa", "eddy", "gamma", "rho", "n_scales"}, where)
    kappa = _real(_require(doc, "kappa", where), f"{where}.kappa", positive=True)
    eddy = _eddy_from(_require(doc, "eddy", where), f"{where}.eddy")
    gamma = _real(doc.get("gamma", 1.0), f"{where}.gamma", positive=True)
    n_scales = _integer(doc.get("n_scales", 1), f"{where}.n_scales", minimum=1)
    if n_scales == 1:
        return single_scale_flow(kappa, eddy, gamma)
    rho = _real(doc.get("rho", 4.0), f"{where}.rho", positive=True)
    return self_similar_flow(kappa, eddy, gamma, rho, n_scales)


def _eddy_echo(doc):
    # grid sample arrays are too bulky to repeat in every summary
    if isinstance(doc, dict) and doc.get("kind") == "grid":
        return {"kind": "grid", "n": doc.get("n"),
                "samples": len(doc.get("data") or [])}
    return doc


def _flow_echo(doc):
    if not isinstance(doc, dict):
        return doc
    if "scales" not in doc:
        out = dict(doc)
        if "eddy" in out:
            out["eddy"] = _eddy_echo(out["eddy"])
        return out
    scales = []
    for item in doc["scales"]:
        it = dict(item) if isinstance(item, dict) else item
        if isinstance(it, dict) and "eddy" in it:
            it["eddy"] = _eddy_echo(it["eddy"])
        scales.append(it)
    return {"kappa": doc.get("kappa"), "scales": scales}


def _tensor_doc(t: SPDTensor) -> dict:
    return {"a11": t.a11, "a12": t.a12, "a22": t.a22}


def _finite_or_none(x: float):
    return x if math.isfinite(x) else None


# ---------------------------------------------------------------------------
# output plumbing


def _out_dir(args) -> Path:
    out = args.out if args.out is not None else os.environ.get(_OUT_ENV, ".")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _emit(outdir: Path, name: str, args, header=None, rows=None, summary=None):
    written = []
    if rows is not None and args.format in ("csv", "both"):
        path = outdir / f"{name}.csv"
        write_csv(path, header, rows)
        written.append(path)
    if summary is not None and args.format in ("json", "both"):
        path = outdir / f"{name}.json"
        write_json(path, summary)
        written.append(path)
    return written


def _finish(args, command: str, outdir: Path, written) -> int:
    meta_path = outdir / f"{command.replace('-', '_')}_meta.json"
    write_metadata(meta_path, command, args.config)
    for path in list(written) + [meta_path]:
        print(path)
    return 0


def _parallel(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# subcommands


def _cmd_homogenize(args) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, {"tensor", "eddy", "gamma", "n", "tol"}, "config")
    a = _tensor_from(_require(cfg, "tensor", "config"))
    eddy = _eddy_from(_require(cfg, "eddy", "config"))
    gamma = _real(cfg.get("gamma", 1.0), "gamma")
    n = _integer(cfg.get("n", 256), "n", minimum=2)
    tol = _real(cfg.get("tol", 1e-9), "tol", positive=True)
    view = as_view(eddy)
    if gamma != 1.0:
        view = view.scaled_by_coeff(gamma)
    eff = effective_conductivity(a, view, n, tol)
    s = eff.sigma_sym
    resolved = {"tensor": _tensor_doc(a), "eddy": _eddy_echo(cfg["eddy"]),
                "gamma": gamma, "n": n, "tol": tol}
    summary = {
        "command": "homogenize",
        "config": resolved,
        "sigma_sym": _tensor_doc(s),
        "sigma_full": [[eff.sigma_full[0][0], eff.sigma_full[0][1]],
                       [eff.sigma_full[1][0], eff.sigma_full[1][1]]],
        "n_used": eff.meta.n,
        "residual": eff.meta.residual,
        "iterations": eff.meta.iterations,
        "converged": eff.meta.converged,
    }
    header = ("sigma11", "sigma12", "sigma22", "n_used", "residual",
              "iterations", "converged")
    rows = [(s.a11, s.a12, s.a22, eff.meta.n, eff.meta.residual,
             eff.meta.iterations, eff.meta.converged)]
    outdir = _out_dir(args)
    written = _emit(outdir, "homogenize", args, header, rows, summary)
    return _finish(args, "homogenize", outdir, written)


_TRAJ_HEADER = ("step", "a11", "a12", "a22", "lambda_min", "lambda_max",
                "lambda_min_running", "lambda_max_running",
                "anisotropy_running", "residual")


def _cmd_core(args) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, {"flow", "n_steps", "n_grid", "tol", "gamma_sweep"}, "config")
    flow_doc = _require(cfg, "flow", "config")
    if not isinstance(flow_doc, dict):
        raise ConfigurationError("flow must be a JSON object")
    # regime classification needs at least 5 states (A0 plus 4 updates)
    n_steps = _integer(_require(cfg, "n_steps", "config"), "n_steps", minimum=4)
    n_grid = _integer(cfg.get("n_grid", 256), "n_grid", minimum=2)
    tol = _real(cfg.get("tol", 1e-9), "tol", positive=True)
    sweep = cfg.get("gamma_sweep")
    if sweep is not None:
        if "scales" in flow_doc:
            raise ConfigurationError(
                "gamma_sweep needs the self-similar flow shorthand, not explicit scales")
        if not isinstance(sweep, list) or not sweep:
            raise ConfigurationError("gamma_sweep must be a non-empty list")
        gammas = [_real(g, "gamma_sweep entry", positive=True) for g in sweep]
        flows = [_flow_from({**flow_doc, "gamma": g}) for g in gammas]
    else:
        gammas = [None]
        flows = [_flow_from(flow_doc)]

    def run(flow):
        traj = iterate_core(flow, n_steps, n_grid, tol)
        return traj, classify_regime(traj)

    results = _parallel(run, flows, args.threads)
    resolved = {"flow": _flow_echo(flow_doc), "n_steps": n_steps,
                "n_grid": n_grid, "tol": tol, "gamma_sweep": gammas if sweep else None}
    outdir = _out_dir(args)
    written = []
    runs = []
    for i, ((traj, label), g) in enumerate(zip(results, gammas)):
        rows = [(k, st.state.a11, st.state.a12, st.state.a22,
                 st.lambda_min, st.lambda_max, st.lambda_minus_n,
                 st.lambda_plus_n, st.mu_n, st.solver_residual)
                for k, st in enumerate(traj.steps)]
        name = "core_trajectory" if g is None else f"core_trajectory_{i}"
        written += _emit(outdir, name, args, _TRAJ_HEADER, rows, None)
        last = traj.steps[-1]
        runs.append({
            "sweep_index": i if g is not None else None,
            "gamma": g,
            "regime": label.kind,
            "rate": label.rate,
            "confidence": label.confidence,
            "detail": label.detail,
            "final_state": _tensor_doc(last.state),
            "lambda_min_running": last.lambda_minus_n,
            "lambda_max_running": last.lambda_plus_n,
            "anisotropy_running": last.mu_n,
        })
    summary = {"command": "core", "config": resolved, "runs": runs}
    written += _emit(outdir, "core", args, None, None, summary)
    return _finish(args, "core", outdir, written)


def _cmd_exit_pde(args) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, {"tensor", "flow", "domain", "n", "n_max", "tol"}, "config")
    a = _tensor_from(_require(cfg, "tensor", "config"))
    flow_doc = cfg.get("flow")
    flow = _flow_from(flow_doc) if flow_doc is not None else zero_flow(1.0, n_scales=1)
    dom_doc = _require(cfg, "domain", "config")
    if not isinstance(dom_doc, dict):
        raise ConfigurationError("domain must be a JSON object")
    _check_keys(dom_doc, {"kind", "size"}, "domain")
    kind = _require(dom_doc, "kind", "domain")
    size = _real(_require(dom_doc, "size", "domain"), "domain.size", positive=True)
    if kind == "disk":
        dom = disk(size)
    elif kind == "square":
        dom = square(size)
    else:
        raise ConfigurationError(f"domain.kind must be 'disk' or 'square', got {kind!r}")
    n = _integer(cfg.get("n", 256), "n", minimum=8)
    n_max = cfg.get("n_max")
    if n_max is not None:
        n_max = _integer(n_max, "n_max", minimum=1)
    tol = _real(cfg.get("tol", 1e-9), "tol", positive=True)
    field = solve_exit_time(a, flow, n_max, dom, n, tol)
    mean = mean_exit_time(field)
    resolved = {"tensor": _tensor_doc(a), "flow": _flow_echo(flow_doc),
                "domain": {"kind": kind, "size": size}, "n": n,
                "n_max": n_max, "tol": tol}
    summary = {
        "command": "exit-pde",
        "config": resolved,
        "mean_exit_time": mean,
        "min_interior": field.min_interior,
        "max_interior": field.max_interior,
        "residual": field.residual,
        "iterations": field.iterations,
        "n": field.n,
    }
    header = ("x1", "x2", "exit_time", "interior")
    outdir = _out_dir(args)
    written = _emit(outdir, "exit_pde_field", args, header, field_rows(field), None)
    written += _emit(outdir, "exit_pde", args, None, None, summary)
    return _finish(args, "exit-pde", outdir, written)


def _cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, {"flow", "r", "mode", "l", "n_particles", "seed",
                      "dt_factor", "max_steps", "scale_truncation"}, "config")
    flow = _flow_from(_require(cfg, "flow", "config"))
    r = _real(_require(cfg, "r", "config"), "r", positive=True)
    mode = cfg.get("mode", "single")
    if mode not in ("single", "pair"):
        raise ConfigurationError(f"mode must be 'single' or 'pair', got {mode!r}")
    seed = args.seed if args.seed is not None else cfg.get("seed")
    if seed is None:
        raise ConfigurationError("config needs 'seed' (or pass --seed)")
    seed = _integer(seed, "seed", minimum=0)
    trunc = cfg.get("scale_truncation")
    if trunc is not None:
        trunc = _integer(trunc, "scale_truncation", minimum=1)
    sim = SimConfig(
        n_particles=_integer(_require(cfg, "n_particles", "config"),
                             "n_particles", minimum=1),
        seed=seed,
        dt_factor=_real(cfg.get("dt_factor", 0.5), "dt_factor", positive=True),
        max_steps=_integer(cfg.get("max_steps", 1_000_000), "max_steps", minimum=1),
        scale_truncation=trunc,
    )
    l = cfg.get("l")
    if mode == "pair":
        if l is not None:
            l = _real(l, "l", positive=True)
        sample = simulate_pair(flow, r, l, sim)
    else:
        if l is not None:
            raise ConfigurationError("'l' only applies to mode 'pair'")
        sample = simulate_exit(flow, r, sim)

    extras: dict = {"mode": mode}
    if r != 1.0 and sample.mean > 0:
        extras["nu_point"] = 2.0 - math.log(sample.mean) / math.log(r)
    else:
        extras["nu_point"] = None
    if flow.n_scales >= 2:
        delta = flow_delta(flow)
        threshold = r ** (2.0 - delta)
        finite = sample.times[~np.isnan(sample.times)]
        extras["delta"] = delta
        extras["event_frequency"] = (
            float(np.count_nonzero(finite <= threshold)) / sample.n_particles)
    else:
        extras["delta"] = None
        extras["event_frequency"] = None
    resolved = {"flow": _flow_echo(cfg["flow"]), "r": r, "mode": mode, "l": l,
                "n_particles": sim.n_particles, "seed": seed,
                "dt_factor": sim.dt_factor, "max_steps": sim.max_steps,
                "scale_truncation": trunc}
    summary = {"command": "simulate", "config": resolved}
    summary.update(sample_summary(sample, extras))
    header = ("particle_id", "exit_time", "censored", "exit_face")
    outdir = _out_dir(args)
    written = _emit(outdir, "simulate_particles", args, header, sample_rows(sample), None)
    written += _emit(outdir, "simulate", args, None, None, summary)
    return _finish(args, "simulate", outdir, written)


def _cmd_vcurve(args) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, {"eddy", "gamma", "zeta_list", "n", "tol", "max_n"}, "config")
    eddy = _eddy_from(_require(cfg, "eddy", "config"))
    gamma = _real(cfg.get("gamma", 1.0), "gamma")
    zeta_list = _require(cfg, "zeta_list", "config")
    if not isinstance(zeta_list, list) or not zeta_list:
        raise ConfigurationError("zeta_list must be a non-empty list")
    zetas = [_real(z, "zeta_list entry", positive=True) for z in zeta_list]
    n = _integer(cfg.get("n", 256), "n", minimum=2)
    tol = _real(cfg.get("tol", 1e-9), "tol", positive=True)
    max_n = _integer(cfg.get("max_n", 4096), "max_n", minimum=n)
    view = as_view(eddy)
    if gamma != 1.0:
        view = view.scaled_by_coeff(gamma)
    curve = v_curve(view, zetas, n, tol, max_n)
    resolved = {"eddy": _eddy_echo(cfg["eddy"]), "gamma": gamma,
                "zeta_list": zetas, "n": n, "tol": tol, "max_n": max_n}
    header = ("zeta", "V", "W", "N_used", "residual", "converged")
    rows = [(p.zeta, p.v, p.w, p.n_used, p.residual, p.converged)
            for p in curve.points]
    summary = {
        "command": "vcurve",
        "config": resolved,
        "monotone_v": curve.monotone_v,
        "monotone_w": curve.monotone_w,
        "annotations": list(curve.annotations),
        "points": [{"zeta": p.zeta, "V": p.v, "W": p.w, "N_used": p.n_used,
                    "residual": p.residual, "converged": p.converged,
                    "resolved": p.resolved} for p in curve.points],
    }
    outdir = _out_dir(args)
    written = _emit(outdir, "vcurve", args, header, rows, summary)
    return _finish(args, "vcurve", outdir, written)


def _cmd_validate(args) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, {"flow"}, "config")
    flow_doc = _require(cfg, "flow", "config")
    flow = _flow_from(flow_doc)
    rep = validate_flow(flow)
    resolved = {"flow": _flow_echo(flow_doc)}
    summary = {
        "command": "validate",
        "config": resolved,
        "compliant": rep.compliant,
        "violations": list(rep.violations),
        "notes": list(rep.notes),
        "rho_min": _finite_or_none(rep.rho_min),
        "rho_max": _finite_or_none(rep.rho_max),
        "gamma_min": _finite_or_none(rep.gamma_min),
        "gamma_max": _finite_or_none(rep.gamma_max),
        "k0": rep.k0,
        "k1": rep.k1,
    }
    header = ("compliant", "n_violations", "rho_min", "rho_max",
              "gamma_min", "gamma_max", "k0", "k1")
    rows = [(rep.compliant, len(rep.violations), rep.rho_min, rep.rho_max,
             rep.gamma_min, rep.gamma_max, rep.k0, rep.k1)]
    outdir = _out_dir(args)
    written = _emit(outdir, "validate", args, header, rows, summary)
    return _finish(args, "validate", outdir, written)


def _cmd_two_scale(args) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, {"tensor", "fine", "coarse", "r_list", "n_base", "tol"}, "config")
    a = _tensor_from(_require(cfg, "tensor", "config"))
    fine = _eddy_from(_require(cfg, "fine", "config"), "fine")
    coarse = _eddy_from(_require(cfg, "coarse", "config"), "coarse")
    r_list = _require(cfg, "r_list", "config")
    if not isinstance(r_list, list) or not r_list:
        raise ConfigurationError("r_list must be a non-empty list")
    rs = [_integer(R, "r_list entry", minimum=2) for R in r_list]
    n_base = _integer(cfg.get("n_base", 256), "n_base", minimum=2)
    tol = _real(cfg.get("tol", 1e-9), "tol", positive=True)

    reports = _parallel(lambda R: two_scale_compare(a, fine, coarse, R, n_base, tol),
                        rs, args.threads)
    resolved = {"tensor": _tensor_doc(a), "fine": _eddy_echo(cfg["fine"]),
                "coarse": _eddy_echo(cfg["coarse"]), "r_list": rs,
                "n_base": n_base, "tol": tol}
    header = ("R", "ratio_min", "ratio_max", "N_used")
    rows = [(rep.r, rep.ratio_lo, rep.ratio_hi, rep.n_direct) for rep in reports]
    summary = {
        "command": "two-scale",
        "config": resolved,
        "rows": [{"R": rep.r, "ratio_min": rep.ratio_lo, "ratio_max": rep.ratio_hi,
                  "deviation": rep.deviation, "N_used": rep.n_direct,
                  "N_inner": rep.n_inner,
                  "direct": _tensor_doc(rep.direct),
                  "reiterated": _tensor_doc(rep.reiterated)} for rep in reports],
    }
    outdir = _out_dir(args)
    written = _emit(outdir, "two_scale", args, header, rows, summary)
    return _finish(args, "two-scale", outdir, written)


def _cmd_sensitivity(args) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, {"fine", "coarse", "r", "y", "zeta_list",
                      "n_base", "tol", "max_n"}, "config")
    fine = _eddy_from(_require(cfg, "fine", "config"), "fine")
    coarse = _eddy_from(_require(cfg, "coarse", "config"), "coarse")
    R = _integer(_require(cfg, "r", "config"), "r", minimum=2)
    y_doc = _require(cfg, "y", "config")
    if not isinstance(y_doc, list) or len(y_doc) != 2:
        raise ConfigurationError("y must be a list of two reals")
    y = (_real(y_doc[0], "y[0]"), _real(y_doc[1], "y[1]"))
    zeta_list = _require(cfg, "zeta_list", "config")
    if not isinstance(zeta_list, list) or not zeta_list:
        raise ConfigurationError("zeta_list must be a non-empty list")
    zetas = [_real(z, "zeta_list entry", positive=True) for z in zeta_list]
    n_base = _integer(cfg.get("n_base", 256), "n_base", minimum=2)
    tol = _real(cfg.get("tol", 1e-9), "tol", positive=True)
    max_n = _integer(cfg.get("max_n", 4096), "max_n", minimum=n_base)
    rep = translation_sensitivity(zetas, fine, coarse, R, y, n_base, tol, max_n)
    resolved = {"fine": _eddy_echo(cfg["fine"]), "coarse": _eddy_echo(cfg["coarse"]),
                "r": R, "y": [y[0], y[1]], "zeta_list": zetas,
                "n_base": n_base, "tol": tol, "max_n": max_n}
    header = ("zeta", "lambda_base", "lambda_shifted", "N_used", "converged")
    rows = [(row.zeta, row.lambda_base, row.lambda_shifted, row.n_used, row.converged)
            for row in rep.rows]
    summary = {
        "command": "sensitivity",
        "config": resolved,
        "slope_base": rep.slope_base,
        "slope_shifted": rep.slope_shifted,
        "annotations": list(rep.annotations),
        "rows": [{"zeta": row.zeta, "lambda_base": row.lambda_base,
                  "lambda_shifted": row.lambda_shifted, "N_used": row.n_used,
                  "converged": row.converged} for row in rep.rows],
    }
    outdir = _out_dir(args)
    written = _emit(outdir, "sensitivity", args, header, rows, summary)
    return _finish(args, "sensitivity", outdir, written)


# ---------------------------------------------------------------------------
# parser and entry point

_COMMANDS = (
    ("homogenize", _cmd_homogenize, "effective conductivity of one eddy"),
    ("core", _cmd_core, "renormalization-core trajectory and regime"),
    ("exit-pde", _cmd_exit_pde, "mean exit time by the adjoint PDE"),
    ("simulate", _cmd_simulate, "Monte Carlo exit times, single tracer or pair"),
    ("vcurve", _cmd_vcurve, "enhancement curves V and W over zeta"),
    ("validate", _cmd_validate, "check a flow against the standing hypotheses"),
    ("two-scale", _cmd_two_scale, "direct vs reiterated two-scale homogenization"),
    ("sensitivity", _cmd_sensitivity, "translation sensitivity of two-scale conductivity"),
)


def _build_parser() -> _ArgumentParser:
    common = _ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", required=True,
                        help="JSON config file")
    common.add_argument("--out", metavar="DIR", default=None,
                        help=f"output directory (default ${_OUT_ENV} or '.')")
    common.add_argument("--threads", type=int, default=1, metavar="N",
                        help="workers for independent solves within one config")
    common.add_argument("--seed", type=int, default=None, metavar="U64",
                        help="override the config seed (simulate only)")
    common.add_argument("--format", choices=("csv", "json", "both"),
                        default="both", help="which data files to write")
    parser = _ArgumentParser(prog="eddylab",
                             description="multiscale transport laboratory")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, func, help_text in _COMMANDS:
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise ConfigurationError(f"--threads must be >= 1, got {args.threads}")
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigurationError("--seed must fit in an unsigned 64-bit integer")
        return args.func(args)
    except ConsistencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ResolutionError, SolverError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EddyLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
