"""Scale-by-scale renormalization of the molecular conductivity.

The recursion starts at A0 = (kappa/gamma_0) I and feeds each state back
through the cell solver: A_{n+1} = (gamma_n/gamma_{n+1}) sigma_sym(A_n, E_n).
Whether the states settle, decay polynomially, or decay exponentially decides
whether averaging survives across scales, so the diagnostics here track the
running extremes of the spectrum rather than per-step values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cell import _next_pow2, effective_conductivity, v_inverse
from .errors import ConfigurationError, RangeError, ResolutionError, SolverError
from .fields import FlowSpec, as_view, validate_flow
from .tensors import SPDTensor, eigen_bounds, identity, peclet, quad_ratio_interval


@dataclass(frozen=True)
class CoreStep:
    state: SPDTensor
    lambda_min: float
    lambda_max: float
    lambda_minus_n: float
    lambda_plus_n: float
    mu_n: float
    solver_residual: float


@dataclass(frozen=True)
class CoreTrajectory:
    steps: tuple[CoreStep, ...]
    flow: FlowSpec
    n_grid: int
    tol: float

    @property
    def states(self) -> tuple[SPDTensor, ...]:
        return tuple(s.state for s in self.steps)

    @property
    def lambda_minus(self) -> tuple[float, ...]:
        return tuple(s.lambda_minus_n for s in self.steps)

    @property
    def lambda_plus(self) -> tuple[float, ...]:
        return tuple(s.lambda_plus_n for s in self.steps)

    @property
    def mu(self) -> tuple[float, ...]:
        return tuple(s.mu_n for s in self.steps)


@dataclass(frozen=True)
class RegimeLabel:
    kind: str   # stable | vanishing_polynomial | vanishing_exponential | undetermined
    rate: float
    confidence: float
    detail: dict


def _diag_step(state: SPDTensor, prev: CoreStep | None, residual: float) -> CoreStep:
    lo, hi = eigen_bounds(state)
    ratio = hi / lo
    if prev is None:
        return CoreStep(state, lo, hi, lo, hi, ratio, residual)
    return CoreStep(state, lo, hi,
                    min(prev.lambda_minus_n, lo),
                    max(prev.lambda_plus_n, hi),
                    max(prev.mu_n, ratio),
                    residual)


def iterate_core(flow: FlowSpec, n_steps: int, n_grid: int = 256,
                 tol: float = 1e-9) -> CoreTrajectory:
    """States A0..A_{n_steps} with running stability/ubiety/distortion diagnostics.

    A scale whose eddy is identically zero contributes sigma_sym(a, 0) = a
    without a solve, so pure rate decay is exact.
    """
    report = validate_flow(flow)
    if not report.compliant:
        raise ConfigurationError(
            "flow violates the standing hypotheses: " + "; ".join(report.violations))
    if n_steps < 0 or n_steps >= flow.n_scales:
        raise ConfigurationError(
            f"step count must lie in [0, {flow.n_scales - 1}] (scales available), got {n_steps}")
    state = identity(flow.kappa / flow.scales[0].gamma)
    steps = [_diag_step(state, None, 0.0)]
    for k in range(n_steps):
        scale_k = flow.scales[k]
        ratio = scale_k.gamma / flow.scales[k + 1].gamma
        view = as_view(scale_k.eddy)
        if view.sup_bound() == 0.0:
            new_state = state.scaled(ratio)
            residual = 0.0
        else:
            try:
                eff = effective_conductivity(state, view, n_grid, tol)
            except SolverError as err:
                raise SolverError(
                    f"core step {k} failed: {err}", residual=err.residual) from err
            new_state = eff.sigma_sym.scaled(ratio)
            residual = eff.meta.residual
        state = new_state
        steps.append(_diag_step(state, steps[-1], residual))
    return CoreTrajectory(steps=tuple(steps), flow=flow, n_grid=n_grid, tol=tol)


@dataclass(frozen=True)
class DiagnosticsRow:
    n: int
    state: SPDTensor
    peclet: SPDTensor
    lambda_min: float
    lambda_max: float
    lambda_minus_n: float
    lambda_plus_n: float
    mu_n: float


def diagnostics(traj: CoreTrajectory) -> tuple[DiagnosticsRow, ...]:
    """Per-step table: state, its inverse (local renormalized Peclet), extremes."""
    if not traj.steps:
        raise ConfigurationError("empty trajectory")
    rows = []
    for n, s in enumerate(traj.steps):
        rows.append(DiagnosticsRow(
            n=n, state=s.state, peclet=peclet(s.state),
            lambda_min=s.lambda_min, lambda_max=s.lambda_max,
            lambda_minus_n=s.lambda_minus_n, lambda_plus_n=s.lambda_plus_n,
            mu_n=s.mu_n))
    return tuple(rows)


@dataclass(frozen=True)
class PathologyReport:
    c_hat: float
    c_hat_normalized: float
    ubiety_flag: bool
    distortion_flag: bool
    products_ubiety: tuple[float, ...]
    products_distortion: tuple[float, ...]


def pathology_bounds_check(traj: CoreTrajectory, gamma_min: float) -> PathologyReport:
    """Fits the smallest constant making both pathology bounds hold.

    The bounds are lambda_plus_n <= kappa + C / lambda_minus_{n-1} and
    mu_n <= kappa / lambda_minus_n + C / lambda_minus_n^2 for an unspecified
    dimensional constant, so C is fitted, reported normalized by
    K0^2 (1 - 1/gamma_min)^{-1}, and only unbounded growth of the products is
    flagged, never asserted against.
    """
    if len(traj.steps) < 3:
        raise ConfigurationError("pathology check needs a trajectory with n >= 2")
    if gamma_min <= 1.0:
        raise ConfigurationError(f"gamma_min must exceed 1, got {gamma_min}")
    kappa = traj.flow.kappa
    c_needed = 0.0
    prod_u = []
    prod_d = []
    for n in range(1, len(traj.steps)):
        s = traj.steps[n]
        lm_prev = traj.steps[n - 1].lambda_minus_n
        c_needed = max(c_needed, (s.lambda_plus_n - kappa) * lm_prev)
        c_needed = max(c_needed, (s.mu_n - kappa / s.lambda_minus_n) * s.lambda_minus_n ** 2)
        prod_u.append(s.lambda_plus_n * lm_prev)
        prod_d.append(s.mu_n * s.lambda_minus_n ** 2)
    c_hat = max(c_needed, 0.0)
    k0 = max(float(np.max(np.abs(sc.eddy.grid))) for sc in traj.flow.scales)
    norm = k0 * k0 / (1.0 - 1.0 / gamma_min) if k0 > 0 else 1.0
    # growth trend over the last half of the trajectory
    def growing(seq):
        tail = seq[len(seq) // 2:]
        if len(tail) < 3:
            return False
        increments = [tail[i + 1] / tail[i] for i in range(len(tail) - 1) if tail[i] > 0]
        return bool(increments) and all(g > 1.05 for g in increments)
    return PathologyReport(
        c_hat=c_hat,
        c_hat_normalized=c_hat / norm,
        ubiety_flag=growing(prod_u),
        distortion_flag=growing(prod_d),
        products_ubiety=tuple(prod_u),
        products_distortion=tuple(prod_d),
    )


def _affine_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares slope, intercept, and R^2 of y against x."""
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r2


def classify_regime(traj: CoreTrajectory) -> RegimeLabel:
    """Stable / vanishing_polynomial / vanishing_exponential / undetermined.

    Stable: the state stopped moving (relative change < 1e-6 over the last
    three steps). Exponential: ln lambda_min affine in n on the tail window
    (R^2 > 0.99); the rate is the tail average of per-step ln ratios.
    Polynomial: ln lambda_min affine in ln n instead.
    """
    steps = traj.steps
    if len(steps) < 5:
        raise ConfigurationError("regime classification needs a trajectory of length >= 5")
    rel_moves = []
    for i in range(1, len(steps)):
        prev, cur = steps[i - 1].state, steps[i].state
        move = max(abs(cur.a11 - prev.a11), abs(cur.a12 - prev.a12), abs(cur.a22 - prev.a22))
        rel_moves.append(move / max(abs(cur.a11), abs(cur.a22), 1e-300))
    if all(m < 1e-6 for m in rel_moves[-3:]):
        lo, _ = eigen_bounds(steps[-1].state)
        return RegimeLabel(kind="stable", rate=0.0, confidence=max(rel_moves[-3:]),
                           detail={"limit_lambda_min": lo,
                                   "limit_state": steps[-1].state})
    lam = np.array([s.lambda_min for s in steps])
    window = max(3, len(steps) // 2)
    tail = lam[-window:]
    n_tail = np.arange(len(steps) - window, len(steps), dtype=float)
    log_lam = np.log(tail)
    slope_n, _, r2_n = _affine_fit(n_tail, log_lam)
    if r2_n > 0.99:
        ratios = np.diff(np.log(lam[-window:]))
        return RegimeLabel(kind="vanishing_exponential", rate=float(np.mean(ratios)),
                           confidence=r2_n, detail={"window": window, "r2": r2_n})
    n_pos = n_tail[n_tail > 0]
    log_pos = log_lam[n_tail > 0]
    if len(n_pos) >= 3:
        slope_ln, _, r2_ln = _affine_fit(np.log(n_pos), log_pos)
        if r2_ln > 0.99:
            return RegimeLabel(kind="vanishing_polynomial", rate=slope_ln,
                               confidence=r2_ln, detail={"window": window, "r2": r2_ln})
    else:
        r2_ln = math.nan
    return RegimeLabel(kind="undetermined", rate=math.nan,
                       confidence=max(r2_n, r2_ln if math.isfinite(r2_ln) else 0.0),
                       detail={"r2_exponential": r2_n, "r2_polynomial": r2_ln})


def fixed_point(curve, gamma: float) -> tuple[float, float]:
    """zeta0 solving V(zeta0) = gamma on the interpolated curve, with residual.

    A gamma above the achieved V range maps to the supercritical report from
    the range error (there is no fixed point to find).
    """
    if gamma <= 1.0:
        raise RangeError(f"gamma must exceed 1 (V > 1 on nontrivial eddies), got {gamma}",
                         achieved_range=(1.0, math.inf))
    zeta0 = v_inverse(curve, gamma)   # raises RangeError when gamma is out of reach
    # residual by re-evaluating the interpolated curve at zeta0
    from .cell import _curve_pairs
    pairs = _curve_pairs(curve)
    lnz = [math.log(z) for z, _ in pairs]
    vs = [v for _, v in pairs]
    t = math.log(zeta0)
    v_at = vs[-1]
    for i in range(len(lnz) - 1):
        if lnz[i] <= t <= lnz[i + 1]:
            w = (t - lnz[i]) / (lnz[i + 1] - lnz[i])
            v_at = vs[i] + w * (vs[i + 1] - vs[i])
            break
    else:
        v_at = vs[0] if t < lnz[0] else vs[-1]
    return zeta0, abs(v_at - gamma)


@dataclass(frozen=True)
class GammaCEstimate:
    gamma_c_lower: float
    divergent: bool
    extrapolated: float
    slope: float


def gamma_c_estimate(curve) -> GammaCEstimate:
    """Limit of V as zeta drops to 0, the critical rate for the recursion.

    Divergence is declared when the log-log slope of V against zeta stays
    below -0.05 over the three smallest resolved points; otherwise the limit
    is Richardson-extrapolated from those three points.
    """
    if hasattr(curve, "points"):
        pts = [(p.zeta, p.v, p.resolved) for p in curve.points
               if p.converged and math.isfinite(p.v)]
    else:
        pts = [(float(r[0]), float(r[1]), True) for r in curve]
    pts.sort(key=lambda t: -t[0])
    if len(pts) < 3:
        raise ConfigurationError("gamma_c estimation needs at least three curve points")
    smallest = pts[-3:]
    unresolved = [z for z, _, ok in smallest if not ok]
    if unresolved:
        raise ResolutionError(
            f"smallest zeta points {unresolved} are unresolved; increase the resolution budget",
            required_n=0)
    z = np.array([p[0] for p in smallest])
    v = np.array([p[1] for p in smallest])
    slope, _, _ = _affine_fit(np.log(z), np.log(v))
    gamma_lower = float(max(p[1] for p in pts))
    if slope < -0.05:
        return GammaCEstimate(gamma_c_lower=gamma_lower, divergent=True,
                              extrapolated=math.inf, slope=slope)
    # Richardson on the three smallest points, assuming V(z) = V0 - c z^p
    d1 = v[2] - v[1]
    d2 = v[1] - v[0]
    extrapolated = gamma_lower
    if d2 != 0.0 and d1 / d2 > 0 and abs(d1) < abs(d2):
        ratio_z = z[2] / z[1]
        p = math.log(d1 / d2) / math.log(ratio_z)
        denom = 1.0 - ratio_z ** p
        if denom != 0.0:
            extrapolated = float(v[2] + d1 * ratio_z ** p / denom)
    extrapolated = max(extrapolated, gamma_lower)
    return GammaCEstimate(gamma_c_lower=gamma_lower, divergent=False,
                          extrapolated=extrapolated, slope=slope)


@dataclass(frozen=True)
class MultiscaleReport:
    direct: SPDTensor
    reiterated: SPDTensor
    ratio_lo: float
    ratio_hi: float
    n_scales: int
    n_direct: int

    @property
    def deviation(self) -> float:
        return max(abs(self.ratio_lo - 1.0), abs(self.ratio_hi - 1.0))


def multiscale_sandwich(flow: FlowSpec, n: int, n_grid: int = 256,
                        tol: float = 1e-9, max_n: int = 4096) -> MultiscaleReport:
    """Direct solve of the n-scale truncated flow against the reiterated core value.

    The truncated stream is periodic with period R_n; rescaled to the unit
    cell it becomes sum_k gamma_k S_{R_n/R_k} E_k with integer scale factors.
    The direct tensor is compared against gamma_{n+1} A_{n+1}.
    """
    if n < 0 or n > 2:
        raise ConfigurationError(f"direct multiscale solves are limited to n <= 2, got {n}")
    if n + 1 >= flow.n_scales:
        raise ConfigurationError(
            f"flow needs scale {n + 1} for the comparison, has {flow.n_scales}")
    radii = flow.radii()
    for k in range(1, n + 1):
        if int(flow.scales[k].r) != flow.scales[k].r:
            raise ConfigurationError(
                f"scale {k}: direct solves need integer scale ratios, got {flow.scales[k].r}")
    period = int(round(radii[n]))
    n_direct = _next_pow2(max(64 * period, n_grid))
    if n_direct > max_n:
        raise ResolutionError(
            f"direct solve needs N={n_direct} for period {period}, beyond budget {max_n}",
            required_n=n_direct)
    view = None
    for k in range(n + 1):
        factor = period / radii[k]
        part = as_view(flow.scales[k].eddy).scaled(factor).scaled_by_coeff(flow.scales[k].gamma)
        view = part if view is None else view + part
    direct = effective_conductivity(identity(flow.kappa), view, n_direct, tol).sigma_sym
    traj = iterate_core(flow, n + 1, n_grid, tol)
    reiterated = traj.states[n + 1].scaled(flow.scales[n + 1].gamma)
    lo, hi = quad_ratio_interval(direct, reiterated)
    return MultiscaleReport(direct=direct, reiterated=reiterated, ratio_lo=lo,
                            ratio_hi=hi, n_scales=n, n_direct=n_direct)
