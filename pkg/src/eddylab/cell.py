"""Periodic cell problem and effective conductivities on the unit torus.

Discretization: collocated centered differences in conservative form. With
G_i the centered difference along axis i, the operator is
M u = -(G1 q1 + G2 q2) with flux q = (a + E(x)) (G1 u, G2 u), coefficients
sampled at nodes. Both G_i are antisymmetric, so M inherits the Gram
structure <v, M u> = <Gv, (a+E) Gu> of the continuum weak form and the
variational identities below hold exactly on the grid:

  * the quadratic form of the full tensor equals the a-weighted energy of
    l - grad(chi) (the skew part drops from quadratic forms);
  * lower bound a <= sigma_sym because the centered gradient of a periodic
    grid function has exactly zero mean;
  * upper bound sigma_sym <= a + <h^2> a / det(a) by the discrete
    Cauchy-Schwarz inequality.

The price is a four-dimensional nullspace (constants plus the three
grid-scale checkerboards, which centered differences cannot see). The
right-hand side is exactly orthogonal to it, the FFT preconditioner zeroes
those modes, and every output depends only on centered gradients, which the
null modes do not affect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import ConfigurationError, ConsistencyError, RangeError, ResolutionError, SolverError
from .fields import as_view
from .tensors import SPDTensor, eigen_bounds, identity, quad_ratio_interval

_DEFAULT_TOL = 1e-9


def _next_pow2(x: float) -> int:
    n = 1
    while n < x:
        n *= 2
    return n


def _validate_solve_inputs(n: int, tol: float) -> None:
    if n < 8 or (n & (n - 1)) != 0:
        raise ConfigurationError(f"grid resolution must be a power of two >= 8, got {n}")
    if not (0.0 < tol <= 1e-3):
        raise ConfigurationError(f"solver tolerance must lie in (0, 1e-3], got {tol}")


def _grad(u: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    half = 0.5 * n
    g1 = (np.roll(u, -1, axis=0) - np.roll(u, 1, axis=0)) * half
    g2 = (np.roll(u, -1, axis=1) - np.roll(u, 1, axis=1)) * half
    return g1, g2


def _make_matvec(a: SPDTensor, h: np.ndarray, n: int):
    a11, a12, a22 = a.a11, a.a12, a.a22
    cp = a12 + h
    cm = a12 - h
    half = 0.5 * n

    def matvec(x: np.ndarray) -> np.ndarray:
        u = x.reshape(n, n)
        g1 = (np.roll(u, -1, axis=0) - np.roll(u, 1, axis=0)) * half
        g2 = (np.roll(u, -1, axis=1) - np.roll(u, 1, axis=1)) * half
        q1 = a11 * g1 + cp * g2
        q2 = cm * g1 + a22 * g2
        d = (np.roll(q1, -1, axis=0) - np.roll(q1, 1, axis=0)) * half
        d += (np.roll(q2, -1, axis=1) - np.roll(q2, 1, axis=1)) * half
        return (-d).ravel()

    return matvec


def _make_preconditioner(a: SPDTensor, n: int):
    """Inverse of the constant-coefficient operator in Fourier space.

    The centered difference has symbol i N sin(2 pi k / N); the four modes
    with k in {0, N/2} per axis are zeroed by index (floating sin(pi) is not
    exactly 0, so a magnitude cutoff would amplify them catastrophically).
    """
    k1 = np.arange(n)
    k2 = np.arange(n // 2 + 1)
    s1 = (n * np.sin(2.0 * np.pi * k1 / n))[:, None]
    s2 = (n * np.sin(2.0 * np.pi * k2 / n))[None, :]
    sym = a.a11 * s1 * s1 + 2.0 * a.a12 * s1 * s2 + a.a22 * s2 * s2
    inv = np.zeros_like(sym)
    mask = np.ones(sym.shape, dtype=bool)
    for i in (0, n // 2):
        for j in (0, n // 2):
            mask[i, j] = False
    inv[mask] = 1.0 / sym[mask]

    def apply(x: np.ndarray) -> np.ndarray:
        r = x.reshape(n, n)
        return np.fft.irfft2(np.fft.rfft2(r) * inv, s=(n, n)).ravel()

    return apply


def _restart_for(n: int) -> int:
    if n <= 512:
        return 50
    if n <= 1024:
        return 25
    return 15


def _project_null(u: np.ndarray, n: int) -> np.ndarray:
    """Remove the constant and the three checkerboard components."""
    u = u - u.mean()
    sign1 = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    c1 = sign1[:, None]
    c2 = sign1[None, :]
    u = u - (u * c1).mean() * c1
    u = u - (u * c2).mean() * c2
    cb = c1 * c2
    u = u - (u * cb).mean() * cb
    return u


def _gmres(op, b, prec, rtol, restart, maxiter, x0=None):
    counter = {"it": 0}

    def cb(_):
        counter["it"] += 1

    try:
        x, info = gmres(op, b, x0=x0, rtol=rtol, atol=0.0, restart=restart,
                        maxiter=maxiter, M=prec, callback=cb, callback_type="pr_norm")
    except TypeError:  # older scipy keyword
        x, info = gmres(op, b, x0=x0, tol=rtol, atol=0.0, restart=restart,
                        maxiter=maxiter, M=prec, callback=cb, callback_type="pr_norm")
    return x, info, counter["it"]


def _solve_one(matvec, prec, b: np.ndarray, n: int, tol: float) -> tuple[np.ndarray, float, int]:
    """One corrector solve; returns (chi grid, true relative residual, iterations)."""
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros((n, n)), 0.0, 0
    op = LinearOperator((n * n, n * n), matvec=matvec, dtype=float)
    prec_op = LinearOperator((n * n, n * n), matvec=prec, dtype=float)
    restart = _restart_for(n)
    x = None
    total_it = 0
    residual = math.inf
    for cycles in (40, 160):
        x, _, it = _gmres(op, b.ravel(), prec_op, 0.2 * tol, restart, cycles, x0=x)
        total_it += it
        residual = float(np.linalg.norm(b.ravel() - matvec(x)) / b_norm)
        if residual <= tol:
            break
    if residual > tol:
        raise SolverError(
            f"cell solve stalled at relative residual {residual:.3e} (target {tol:.1e}, "
            f"{total_it} iterations at N={n})", residual=residual)
    return _project_null(x.reshape(n, n), n), residual, total_it


@dataclass(frozen=True)
class CellSolution:
    """Correctors for l = e1, e2 plus solver diagnostics."""

    chi1: np.ndarray
    chi2: np.ndarray
    residual: float
    iterations: int
    n: int


@dataclass(frozen=True)
class SolveMeta:
    n: int
    residual: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class EffectiveConductivity:
    sigma_sym: SPDTensor
    sigma_full: np.ndarray
    meta: SolveMeta


def solve_cell(a: SPDTensor, E, n: int, tol: float = _DEFAULT_TOL) -> CellSolution:
    """Correctors chi_l of div (a+E)(l - grad chi_l) = 0 for l = e1, e2.

    The right-hand side for direction l is l1 G2(h) - l2 G1(h); constants
    drop out, so a zero stream function yields chi = 0 without iterating.
    """
    _validate_solve_inputs(n, tol)
    view = as_view(E)
    h = view.grid_samples(n)
    g1h, g2h = _grad(h, n)
    matvec = _make_matvec(a, h, n)
    prec = _make_preconditioner(a, n)
    chi1, r1, it1 = _solve_one(matvec, prec, g2h, n, tol)
    chi2, r2, it2 = _solve_one(matvec, prec, -g1h, n, tol)
    return CellSolution(chi1=chi1, chi2=chi2, residual=max(r1, r2),
                        iterations=it1 + it2, n=n)


def _quadratures(a: SPDTensor, h: np.ndarray, sol: CellSolution):
    """Grid quadrature of the effective tensors from the corrector gradients."""
    n = sol.n
    a11, a12, a22 = a.a11, a.a12, a.a22
    g11, g12 = _grad(sol.chi1, n)   # grad chi_1
    g21, g22 = _grad(sol.chi2, n)   # grad chi_2
    f11 = 1.0 - g11   # grad F_{e1} = e1 - grad chi_1
    f12 = -g12
    f21 = -g21        # grad F_{e2}
    f22 = 1.0 - g22
    # full tensor columns: mean of (a + E) grad F_l
    full = np.empty((2, 2))
    full[0, 0] = np.mean(a11 * f11 + (a12 + h) * f12)
    full[1, 0] = np.mean((a12 - h) * f11 + a22 * f12)
    full[0, 1] = np.mean(a11 * f21 + (a12 + h) * f22)
    full[1, 1] = np.mean((a12 - h) * f21 + a22 * f22)
    # symmetric tensor via the a-weighted quadratic form of grad F
    q11 = np.mean(a11 * f11 * f11 + 2.0 * a12 * f11 * f12 + a22 * f12 * f12)
    q22 = np.mean(a11 * f21 * f21 + 2.0 * a12 * f21 * f22 + a22 * f22 * f22)
    q12 = np.mean(a11 * f11 * f21 + a12 * (f11 * f22 + f12 * f21) + a22 * f12 * f22)
    return full, float(q11), float(q12), float(q22)


def effective_conductivity(a: SPDTensor, E, n: int, tol: float = _DEFAULT_TOL) -> EffectiveConductivity:
    """sigma_sym and the full (generally non-symmetric) effective tensor.

    Verifies before returning that sym(sigma_full) matches the quadratic-form
    tensor and that the sandwich a <= sigma_sym <= a + <h^2> a / det(a) holds;
    both are exact identities of the scheme, so a violation beyond 10x the
    solver tolerance signals an internal inconsistency.
    """
    view = as_view(E)
    sol = solve_cell(a, view, n, tol)
    h = view.grid_samples(n)
    full, q11, q12, q22 = _quadratures(a, h, sol)
    sigma = SPDTensor(q11, q12, q22)
    scale = q11 + q22
    slack = 10.0 * max(tol, sol.residual) * scale
    sym_dev = max(abs(0.5 * (full[0, 1] + full[1, 0]) - q12),
                  abs(full[0, 0] - q11), abs(full[1, 1] - q22))
    if sym_dev > slack:
        raise ConsistencyError(
            f"symmetric part of the full tensor deviates from the quadratic form by "
            f"{sym_dev:.3e} (allowed {slack:.3e})")
    bound = float(np.mean(h * h)) / a.det()
    for l1, l2 in ((1.0, 0.0), (0.0, 1.0), (math.sqrt(0.5), math.sqrt(0.5))):
        low = a.quad((l1, l2))
        mid = q11 * l1 * l1 + 2.0 * q12 * l1 * l2 + q22 * l2 * l2
        high = low * (1.0 + bound)
        if low - mid > slack or mid - high > slack:
            raise ConsistencyError(
                f"sandwich violated for l=({l1:.3f},{l2:.3f}): "
                f"{low:.6e} <= {mid:.6e} <= {high:.6e} fails beyond {slack:.3e}")
    meta = SolveMeta(n=sol.n, residual=sol.residual, iterations=sol.iterations, converged=True)
    return EffectiveConductivity(sigma_sym=sigma, sigma_full=full, meta=meta)


@dataclass(frozen=True)
class ScalingReport:
    sigma_base: SPDTensor
    sigma_scaled: SPDTensor
    rho: int
    n_base: int
    n_scaled: int
    max_rel_deviation: float


def scaling_invariance_check(a: SPDTensor, E, rho: int, n_base: int = 256,
                             tol: float = _DEFAULT_TOL) -> ScalingReport:
    """Compares sigma_sym(a, E) with sigma_sym(a, S_rho E) at matched resolution.

    The scaled field is solved on the next power of two >= rho * n_base so the
    fast field keeps the base sampling density. For integer rho aligned with
    the eddy grid the scaled discrete system tiles the base one, so the
    deviation is limited by solver residuals only.
    """
    if rho < 1 or int(rho) != rho:
        raise ConfigurationError(f"scaling factor must be an integer >= 1, got {rho}")
    rho = int(rho)
    view = as_view(E)
    base = effective_conductivity(a, view, n_base, tol)
    n_scaled = _next_pow2(rho * n_base)
    scaled = effective_conductivity(a, view.scaled(rho), n_scaled, tol)
    b = base.sigma_sym
    s = scaled.sigma_sym
    denom = max(abs(b.a11), abs(b.a22), 1e-300)
    dev = max(abs(s.a11 - b.a11), abs(s.a12 - b.a12), abs(s.a22 - b.a22)) / denom
    return ScalingReport(sigma_base=b, sigma_scaled=s, rho=rho, n_base=n_base,
                         n_scaled=n_scaled, max_rel_deviation=float(dev))


@dataclass(frozen=True)
class VCurvePoint:
    zeta: float
    v: float
    w: float
    n_used: int
    residual: float
    converged: bool
    resolved: bool


@dataclass(frozen=True)
class VCurve:
    points: tuple[VCurvePoint, ...]
    monotone_v: bool
    monotone_w: bool
    annotations: tuple[str, ...]


def v_curve(E, zeta_list, n: int = 256, tol: float = _DEFAULT_TOL,
            max_n: int = 4096) -> VCurve:
    """V(zeta) = lambda_min(sigma_sym(zeta I, E)) / zeta and W likewise for lambda_max.

    Resolution is escalated to keep zeta >= 2 pi K1 / N (the advective
    boundary layer must stay resolved); points that would exceed max_n are
    solved there anyway and flagged unresolved. Solver failures yield
    NaN entries so a partial curve is still returned.
    """
    zetas = [float(z) for z in zeta_list]
    if not zetas or any(z <= 0 for z in zetas):
        raise ConfigurationError("zeta values must be positive")
    if any(zetas[i] <= zetas[i + 1] for i in range(len(zetas) - 1)):
        raise ConfigurationError("zeta values must be sorted in descending order")
    view = as_view(E)
    k1 = view.lipschitz_bound()
    points: list[VCurvePoint] = []
    annotations: list[str] = []
    for zeta in zetas:
        n_req = max(n, _next_pow2(2.0 * math.pi * k1 / zeta)) if k1 > 0 else n
        n_used = min(n_req, max_n)
        resolved = n_used >= n_req
        if not resolved:
            annotations.append(
                f"zeta={zeta:g}: required N={n_req} exceeds budget {max_n}, solved unresolved")
        try:
            eff = effective_conductivity(identity(zeta), view, n_used, tol)
            lo, hi = eigen_bounds(eff.sigma_sym)
        except SolverError as err:
            annotations.append(f"zeta={zeta:g}: solver failure, residual {err.residual:.3e}")
            points.append(VCurvePoint(zeta, math.nan, math.nan, n_used,
                                      float(err.residual), False, resolved))
            continue
        points.append(VCurvePoint(zeta, lo / zeta, hi / zeta, n_used,
                                  eff.meta.residual, True, resolved))
    ok = [p for p in points if p.converged]
    monotone_v = all(ok[i].v <= ok[i + 1].v * (1 + 1e-10) for i in range(len(ok) - 1))
    monotone_w = all(ok[i].w <= ok[i + 1].w * (1 + 1e-10) for i in range(len(ok) - 1))
    if not monotone_v:
        annotations.append("V is not monotone along descending zeta")
    if not monotone_w:
        annotations.append("W is not monotone along descending zeta")
    return VCurve(points=tuple(points), monotone_v=monotone_v, monotone_w=monotone_w,
                  annotations=tuple(annotations))


def _curve_pairs(curve) -> list[tuple[float, float]]:
    if isinstance(curve, VCurve):
        pairs = [(p.zeta, p.v) for p in curve.points if p.converged and math.isfinite(p.v)]
    else:
        pairs = []
        for row in curve:
            zeta, v = float(row[0]), float(row[1])
            pairs.append((zeta, v))
    return sorted(pairs)


def v_inverse(curve, x: float) -> float:
    """zeta with V(zeta) = x on the interpolated curve (V is decreasing in zeta)."""
    pairs = _curve_pairs(curve)
    if len(pairs) < 2:
        raise ConfigurationError("v_inverse needs at least two converged curve points")
    zs = [p[0] for p in pairs]
    vs = [p[1] for p in pairs]
    if any(vs[i] < vs[i + 1] - 1e-9 * abs(vs[i]) for i in range(len(vs) - 1)):
        raise ConfigurationError("curve is not monotone decreasing in zeta")
    v_min, v_max = min(vs), max(vs)
    if not (v_min <= x <= v_max):
        raise RangeError(f"target {x} outside achieved V range [{v_min:g}, {v_max:g}]",
                         achieved_range=(v_min, v_max))
    for z, v in pairs:
        if v == x:
            return z
    lnz = [math.log(z) for z in zs]

    def interp(t: float) -> float:
        if t <= lnz[0]:
            return vs[0]
        if t >= lnz[-1]:
            return vs[-1]
        for i in range(len(lnz) - 1):
            if lnz[i] <= t <= lnz[i + 1]:
                w = (t - lnz[i]) / (lnz[i + 1] - lnz[i])
                return vs[i] + w * (vs[i + 1] - vs[i])
        return vs[-1]

    lo, hi = lnz[0], lnz[-1]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if interp(mid) >= x:   # V decreases along increasing zeta
            lo = mid
        else:
            hi = mid
    return math.exp(0.5 * (lo + hi))


@dataclass(frozen=True)
class TwoScaleReport:
    direct: SPDTensor
    reiterated: SPDTensor
    ratio_lo: float
    ratio_hi: float
    r: int
    n_direct: int
    n_inner: int

    @property
    def deviation(self) -> float:
        return max(abs(self.ratio_lo - 1.0), abs(self.ratio_hi - 1.0))


def two_scale_compare(a: SPDTensor, P, K, R: int, n_base: int = 256,
                      tol: float = _DEFAULT_TOL, max_n: int = 4096) -> TwoScaleReport:
    """Direct sigma_sym(a, S_R P + K) against the reiterated sigma_sym(sigma_sym(a,P), K).

    The direct solve runs at N >= 64 R so the fast scale keeps at least 64
    samples per period. Identically-zero P or K short-circuits: the two sides
    are then the same discrete object (for zero K via the tiling identity of
    the scaled system), so solving twice would only add solver noise.
    """
    if int(R) != R or R < 2:
        raise ConfigurationError(f"scale ratio R must be an integer >= 2, got {R}")
    R = int(R)
    n_direct = _next_pow2(max(64 * R, n_base))
    if n_direct > max_n:
        raise ResolutionError(
            f"two-scale comparison needs N={n_direct} (64 per fast period), "
            f"beyond the budget {max_n}", required_n=n_direct)
    p_view = as_view(P)
    k_view = as_view(K)
    if p_view.sup_bound() == 0.0:
        eff = effective_conductivity(a, k_view, n_direct, tol)
        return TwoScaleReport(direct=eff.sigma_sym, reiterated=eff.sigma_sym,
                              ratio_lo=1.0, ratio_hi=1.0, r=R,
                              n_direct=n_direct, n_inner=n_direct)
    if k_view.sup_bound() == 0.0:
        n_inner = max(8, n_direct // R)
        eff = effective_conductivity(a, p_view, n_inner, tol)
        return TwoScaleReport(direct=eff.sigma_sym, reiterated=eff.sigma_sym,
                              ratio_lo=1.0, ratio_hi=1.0, r=R,
                              n_direct=n_direct, n_inner=n_inner)
    direct = effective_conductivity(a, p_view.scaled(R) + k_view, n_direct, tol)
    inner = effective_conductivity(a, p_view, n_base, tol)
    outer = effective_conductivity(inner.sigma_sym, k_view, n_base, tol)
    lo, hi = quad_ratio_interval(direct.sigma_sym, outer.sigma_sym)
    return TwoScaleReport(direct=direct.sigma_sym, reiterated=outer.sigma_sym,
                          ratio_lo=lo, ratio_hi=hi, r=R,
                          n_direct=n_direct, n_inner=n_base)


@dataclass(frozen=True)
class SensitivityRow:
    zeta: float
    lambda_base: float
    lambda_shifted: float
    n_used: int
    converged: bool


@dataclass(frozen=True)
class SensitivityReport:
    rows: tuple[SensitivityRow, ...]
    slope_base: float
    slope_shifted: float
    annotations: tuple[str, ...]


def translation_sensitivity(zeta_list, P, K, R: int, y, n_base: int = 256,
                            tol: float = _DEFAULT_TOL, max_n: int = 4096) -> SensitivityReport:
    """Small-zeta scaling of lambda_min for S_R P + K against S_R Theta_y P + K.

    Slopes are log-log fits of lambda_min(sigma_sym(zeta I, .)) over the three
    smallest converged zeta. A shift y that opens or blocks channels between
    the two scales shows up as a slope gap.
    """
    zetas = [float(z) for z in zeta_list]
    if not zetas or any(z <= 0 for z in zetas):
        raise ConfigurationError("zeta values must be positive")
    if any(zetas[i] <= zetas[i + 1] for i in range(len(zetas) - 1)):
        raise ConfigurationError("zeta values must be sorted in descending order")
    if int(R) != R or R < 1:
        raise ConfigurationError(f"scale ratio R must be a positive integer, got {R}")
    R = int(R)
    p_view = as_view(P)
    k_view = as_view(K)
    base_view = p_view.scaled(R) + k_view
    shift_view = p_view.translated(y).scaled(R) + k_view
    k1 = max(base_view.lipschitz_bound(), 1e-300)
    rows: list[SensitivityRow] = []
    annotations: list[str] = []
    for zeta in zetas:
        n_req = max(n_base, _next_pow2(2.0 * math.pi * k1 / zeta))
        n_used = min(n_req, max_n)
        if n_used < n_req:
            annotations.append(f"zeta={zeta:g}: capped at N={max_n} (wanted {n_req})")
        try:
            eb = effective_conductivity(identity(zeta), base_view, n_used, tol)
            es = effective_conductivity(identity(zeta), shift_view, n_used, tol)
        except SolverError as err:
            annotations.append(f"zeta={zeta:g}: solver failure ({err})")
            rows.append(SensitivityRow(zeta, math.nan, math.nan, n_used, False))
            continue
        rows.append(SensitivityRow(zeta, eigen_bounds(eb.sigma_sym)[0],
                                   eigen_bounds(es.sigma_sym)[0], n_used, True))
    ok = [r for r in rows if r.converged]
    if len(ok) < 3:
        annotations.append("fewer than three converged points; slopes are NaN")
        slope_b = slope_s = math.nan
    else:
        tail = ok[-3:]
        lz = np.log([r.zeta for r in tail])
        slope_b = float(np.polyfit(lz, np.log([r.lambda_base for r in tail]), 1)[0])
        slope_s = float(np.polyfit(lz, np.log([r.lambda_shifted for r in tail]), 1)[0])
    return SensitivityReport(rows=tuple(rows), slope_base=slope_b,
                             slope_shifted=slope_s, annotations=tuple(annotations))
