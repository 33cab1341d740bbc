"""Periodic stream functions (eddies) on the unit torus and multiscale flows.

In 2D a skew stream matrix is a single scalar field h; the incompressible
velocity it drives is the perpendicular gradient (d2 h, -d1 h). Eddies are
stored as grid samples so that non-smooth cutoff constructions are supported
uniformly; scaling S_rho and translation Theta_y act lazily through views.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

# grid[i, j] samples h at x = (i/N, j/N); axis 0 is x1, axis 1 is x2.


def _require_power_of_two(n: int, what: str) -> None:
    if n < 1 or (n & (n - 1)) != 0:
        raise ConfigurationError(f"{what} must be a power of two, got {n}")


class Eddy:
    """One periodic stream function sampled on an N x N grid over [0,1)^2."""

    def __init__(self, grid: np.ndarray, kind: str = "grid", notes: tuple[str, ...] = ()):
        grid = np.ascontiguousarray(np.asarray(grid, dtype=float))
        if grid.ndim != 2 or grid.shape[0] != grid.shape[1]:
            raise ConfigurationError(f"eddy grid must be square, got shape {grid.shape}")
        _require_power_of_two(grid.shape[0], "eddy resolution")
        if not np.all(np.isfinite(grid)):
            raise ConfigurationError("eddy grid contains non-finite samples")
        grid.flags.writeable = False
        self.grid = grid
        self.n = grid.shape[0]
        self.kind = kind
        self.notes = tuple(notes)
        self._deriv: tuple[np.ndarray, np.ndarray] | None = None

    def sample(self, x1, x2):
        """Bilinear interpolation of h at points (x1, x2), periodic wrap."""
        return _bilinear(self.grid, np.asarray(x1, dtype=float), np.asarray(x2, dtype=float))

    def derivative_grids(self) -> tuple[np.ndarray, np.ndarray]:
        """Centered-difference gradients (d1 h, d2 h) on the eddy grid, cached."""
        if self._deriv is None:
            h = self.grid
            scale = 0.5 * self.n
            d1 = (np.roll(h, -1, axis=0) - np.roll(h, 1, axis=0)) * scale
            d2 = (np.roll(h, -1, axis=1) - np.roll(h, 1, axis=1)) * scale
            d1.flags.writeable = False
            d2.flags.writeable = False
            self._deriv = (d1, d2)
        return self._deriv

    def view(self) -> "FieldView":
        return FieldView(((self, 1.0, (0.0, 0.0), 1.0),))


def _bilinear(grid: np.ndarray, x1: np.ndarray, x2: np.ndarray):
    n = grid.shape[0]
    u = np.mod(x1, 1.0) * n
    v = np.mod(x2, 1.0) * n
    i0 = np.floor(u).astype(np.int64) % n
    j0 = np.floor(v).astype(np.int64) % n
    fu = u - np.floor(u)
    fv = v - np.floor(v)
    i1 = (i0 + 1) % n
    j1 = (j0 + 1) % n
    g00 = grid[i0, j0]
    g10 = grid[i1, j0]
    g01 = grid[i0, j1]
    g11 = grid[i1, j1]
    return (g00 * (1 - fu) * (1 - fv) + g10 * fu * (1 - fv)
            + g01 * (1 - fu) * fv + g11 * fu * fv)


class FieldView:
    """Lazy affine combination of scaled/translated eddies, itself unit-periodic.

    Terms are (eddy, rho, shift, coeff) and evaluate to
    sum_t coeff_t * h_t(rho_t * x + shift_t). Scaling by integer rho keeps unit
    periodicity exact; non-integer rho is allowed for sampling experiments but
    the view is then only periodic on the torus of the underlying eddy.
    """

    def __init__(self, terms):
        self.terms = tuple((e, float(rho), (float(s[0]), float(s[1])), float(c)) for e, rho, s, c in terms)
        if not self.terms:
            raise ConfigurationError("field view needs at least one term")

    def sample(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        out = np.zeros(np.broadcast(x1, x2).shape, dtype=float)
        for eddy, rho, (s1, s2), coeff in self.terms:
            out += coeff * eddy.sample(rho * x1 + s1, rho * x2 + s2)
        return out

    def grid_samples(self, n: int) -> np.ndarray:
        """Samples on the n x n solver grid; exact at nodes aligned with eddy grids."""
        t = np.arange(n) / n
        x1 = t[:, None]
        x2 = t[None, :]
        out = np.zeros((n, n), dtype=float)
        for eddy, rho, (s1, s2), coeff in self.terms:
            out = out + coeff * eddy.sample(rho * x1 + s1, rho * x2 + s2)
        return out

    def sup_bound(self) -> float:
        """Upper bound on sup |h| from the triangle inequality over terms."""
        return sum(abs(c) * float(np.max(np.abs(e.grid))) for e, _, _, c in self.terms)

    def lipschitz_bound(self) -> float:
        """Upper bound on the Lipschitz constant; scaling by rho multiplies it."""
        total = 0.0
        for eddy, rho, _, coeff in self.terms:
            k0, k1 = eddy_norms(eddy)
            total += abs(coeff) * rho * k1
        return total

    def scaled(self, rho: float) -> "FieldView":
        return FieldView(tuple((e, r * rho, (s1, s2), c) for e, r, (s1, s2), c in self.terms))

    def translated(self, y) -> "FieldView":
        y1, y2 = float(y[0]), float(y[1])
        return FieldView(tuple((e, r, (s1 + r * y1, s2 + r * y2), c) for e, r, (s1, s2), c in self.terms))

    def __add__(self, other: "FieldView") -> "FieldView":
        return FieldView(self.terms + other.terms)

    def scaled_by_coeff(self, c: float) -> "FieldView":
        return FieldView(tuple((e, r, s, c0 * c) for e, r, s, c0 in self.terms))


def as_view(e) -> FieldView:
    if isinstance(e, FieldView):
        return e
    if isinstance(e, Eddy):
        return e.view()
    raise ConfigurationError(f"expected an Eddy or FieldView, got {type(e).__name__}")


def zero_eddy(n: int = 8) -> Eddy:
    return Eddy(np.zeros((n, n)), kind="zero")


def cellular_eddy(n: int = 256) -> Eddy:
    """Stream function sin(2 pi x1) cos(2 pi x2); fills the cell with closed rolls."""
    if n < 8:
        raise ConfigurationError(f"cellular eddy needs n >= 8, got {n}")
    _require_power_of_two(n, "cellular eddy resolution")
    t = 2.0 * np.pi * np.arange(n) / n
    grid = np.sin(t)[:, None] * np.cos(t)[None, :]
    return Eddy(grid, kind="cellular")


def shear_eddy(n: int = 256) -> Eddy:
    """Stream function sin(2 pi x2); a layered flow along x1, the closed-form benchmark."""
    if n < 8:
        raise ConfigurationError(f"shear eddy needs n >= 8, got {n}")
    _require_power_of_two(n, "shear eddy resolution")
    t = np.sin(2.0 * np.pi * np.arange(n) / n)
    grid = np.tile(t[None, :], (n, 1))
    return Eddy(grid, kind="shear", notes=("shear sin(2 pi x2)",))


def _smoothstep_quintic(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


def implosive_eddy(n: int = 256) -> Eddy:
    """Compactly supported eddy: sin(2 pi x1) sin(2 pi x2) times a radial cutoff.

    The cutoff g(s) with s = 4((x1-1/2)^2 + (x2-1/2)^2) is 1 on [0, 1/3],
    0 for s >= 2/3, and a C2 quintic smoothstep in between, so the flow dies
    identically near the cell boundary and transport there is purely molecular.
    """
    if n < 64:
        raise ConfigurationError(f"implosive eddy needs n >= 64 to resolve the cutoff, got {n}")
    _require_power_of_two(n, "implosive eddy resolution")
    x = np.arange(n) / n
    s = 4.0 * ((x[:, None] - 0.5) ** 2 + (x[None, :] - 0.5) ** 2)
    g = 1.0 - _smoothstep_quintic((s - 1.0 / 3.0) * 3.0)
    g[s >= 2.0 / 3.0] = 0.0
    t = 2.0 * np.pi * x
    grid = np.sin(t)[:, None] * np.sin(t)[None, :] * g
    return Eddy(grid, kind="implosive")


def figure1_eddy(n: int = 256) -> Eddy:
    """A strongly folded single-scale stream function used in the showcase flow.

    The raw formula does not vanish at the origin; the constructed eddy is
    shifted by its origin value (recorded in notes) so the h(0,0)=0 hypothesis
    holds for the stored grid.
    """
    _require_power_of_two(n, "eddy resolution")
    x = 2.0 * np.pi * np.arange(n) / n
    x1 = x[:, None]
    x2 = x[None, :]
    raw = 2.0 * np.sin(x1 + 3.0 * np.cos(x2 - 3.0 * np.sin(x1 + 1.0))) \
        * np.sin(x2 + 3.0 * np.cos(x1 - 3.0 * np.sin(x2 + 1.0)))
    shift = float(raw[0, 0])
    return Eddy(raw - shift, kind="grid", notes=(f"origin value {shift:.6f} subtracted",))


def scale_eddy(e, rho: float) -> FieldView:
    """S_rho: view sampling the stream function at rho * x with periodic wrap."""
    if rho < 1.0:
        raise ConfigurationError(f"scaling factor must be >= 1, got {rho}")
    return as_view(e).scaled(rho)


def translate_eddy(e, y) -> FieldView:
    """Theta_y: view sampling the stream function at x + y with periodic wrap."""
    return as_view(e).translated(y)


def eddy_norms(e: Eddy) -> tuple[float, float]:
    """(K0, K1): discrete sup norm and discrete Lipschitz constant of the grid."""
    h = e.grid
    k0 = float(np.max(np.abs(h)))
    n = h.shape[0]
    d1 = np.abs(np.roll(h, -1, axis=0) - h).max()
    d2 = np.abs(np.roll(h, -1, axis=1) - h).max()
    return k0, float(max(d1, d2) * n)


@dataclass(frozen=True)
class Scale:
    """One flow scale: rate gamma_k, ratio r_k to the previous scale, and its eddy."""

    gamma: float
    r: float
    eddy: Eddy


@dataclass(frozen=True)
class FlowSpec:
    """Multiscale flow Gamma = sum_k gamma_k E^k(x / R_k) with molecular kappa."""

    kappa: float
    scales: tuple[Scale, ...]

    def __post_init__(self):
        if not (self.kappa > 0 and math.isfinite(self.kappa)):
            raise ConfigurationError(f"kappa must be a positive real, got {self.kappa}")
        object.__setattr__(self, "scales", tuple(self.scales))
        for k, s in enumerate(self.scales):
            if s.gamma <= 0 or not math.isfinite(s.gamma):
                raise ConfigurationError(f"scale {k}: gamma must be positive, got {s.gamma}")
            if s.r <= 0 or not math.isfinite(s.r):
                raise ConfigurationError(f"scale {k}: r must be positive, got {s.r}")

    @property
    def n_scales(self) -> int:
        return len(self.scales)

    def radii(self) -> list[float]:
        """R_k = prod_{j<=k} r_j."""
        out = []
        acc = 1.0
        for s in self.scales:
            acc *= s.r
            out.append(acc)
        return out

    def gamma_ratio_bounds(self) -> tuple[float, float]:
        """(gamma_min, gamma_max) over consecutive rate ratios; (inf, 0) if < 2 scales."""
        ratios = [self.scales[k + 1].gamma / self.scales[k].gamma for k in range(len(self.scales) - 1)]
        if not ratios:
            return math.inf, 0.0
        return min(ratios), max(ratios)

    def rho_bounds(self) -> tuple[float, float]:
        """(rho_min, rho_max) over the scale ratios r_k, k >= 1."""
        rs = [s.r for s in self.scales[1:]]
        if not rs:
            return math.inf, 0.0
        return min(rs), max(rs)


def single_scale_flow(kappa: float, eddy: Eddy, gamma: float = 1.0) -> FlowSpec:
    return FlowSpec(kappa, (Scale(gamma, 1.0, eddy),))


def self_similar_flow(kappa: float, eddy: Eddy, gamma: float, rho: float, n_scales: int) -> FlowSpec:
    """Geometric flow: gamma_k = gamma^k, r_k = rho for k >= 1, same eddy at all scales."""
    if n_scales < 1:
        raise ConfigurationError("a flow needs at least one scale")
    scales = [Scale(1.0, 1.0, eddy)]
    for k in range(1, n_scales):
        scales.append(Scale(gamma ** k, rho, eddy))
    return FlowSpec(kappa, tuple(scales))


def zero_flow(kappa: float, gamma: float = 2.0, rho: float = 4.0, n_scales: int = 12) -> FlowSpec:
    # rho must stay above gamma for the flow to satisfy the rate-growth cap
    return self_similar_flow(kappa, zero_eddy(), gamma, rho, n_scales)


def figure1_flow(kappa: float = 1.0, n: int = 256) -> FlowSpec:
    """Three-scale showcase flow: rho = 3, gamma = 1.1, one folded eddy at every scale."""
    e = figure1_eddy(n)
    scales = (Scale(1.0, 1.0, e), Scale(1.1, 3.0, e), Scale(1.1 ** 2, 3.0, e))
    return FlowSpec(kappa, scales)


class VelocitySampler:
    """Evaluates the divergence-free drift of a flow truncated at scale n_max.

    The drift is (d2 H, -d1 H) for H(x) = sum_{k<=n_max} gamma_k h_k(x/R_k);
    each derivative comes from the centered-difference grids of its eddy,
    bilinearly interpolated, with the chain-rule factor gamma_k / R_k.
    """

    def __init__(self, flow: FlowSpec, n_max: int | None = None):
        if n_max is None:
            n_max = flow.n_scales - 1
        if not (0 <= n_max < flow.n_scales):
            raise ConfigurationError(
                f"n_max must index an existing scale (0..{flow.n_scales - 1}), got {n_max}")
        self.flow = flow
        self.n_max = n_max
        radii = flow.radii()
        self._terms = []
        for k in range(n_max + 1):
            s = flow.scales[k]
            d1, d2 = s.eddy.derivative_grids()
            if np.max(np.abs(s.eddy.grid)) == 0.0:
                continue
            self._terms.append((d1, d2, radii[k], s.gamma / radii[k]))

    def __call__(self, x1, x2):
        """Velocity components (v1, v2) at points (x1, x2), vectorized."""
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        v1 = np.zeros(np.broadcast(x1, x2).shape, dtype=float)
        v2 = np.zeros_like(v1)
        for d1, d2, radius, coeff in self._terms:
            u1 = x1 / radius
            u2 = x2 / radius
            v1 += coeff * _bilinear(d2, u1, u2)
            v2 -= coeff * _bilinear(d1, u1, u2)
        return v1, v2

    def speed_bound(self) -> float:
        """sup |v| bound: sum_k (gamma_k / R_k) K1_k, used for time-step control."""
        total = 0.0
        for d1, d2, _, coeff in self._terms:
            total += abs(coeff) * float(np.sqrt(d1 ** 2 + d2 ** 2).max())
        return total


def velocity(flow: FlowSpec, x, n_max: int | None = None):
    """Drift vector at a single point x = (x1, x2); see VelocitySampler for batches."""
    sampler = VelocitySampler(flow, n_max)
    v1, v2 = sampler(np.asarray([x[0]], dtype=float), np.asarray([x[1]], dtype=float))
    return float(v1[0]), float(v2[0])


def total_stream_view(flow: FlowSpec, n_max: int | None = None) -> FieldView:
    """View of H = sum_{k<=n_max} gamma_k h_k(x/R_k) in physical coordinates.

    Note rho < 1 here (physical x spans many unit cells); used by the exit-time
    solver, which samples on bounded domains rather than the unit torus.
    """
    if n_max is None:
        n_max = flow.n_scales - 1
    if not (0 <= n_max < flow.n_scales):
        raise ConfigurationError(
            f"n_max must index an existing scale (0..{flow.n_scales - 1}), got {n_max}")
    radii = flow.radii()
    terms = []
    for k in range(n_max + 1):
        s = flow.scales[k]
        terms.append((s.eddy, 1.0 / radii[k], (0.0, 0.0), s.gamma))
    return FieldView(terms)


@dataclass(frozen=True)
class FlowReport:
    compliant: bool
    violations: tuple[str, ...]
    rho_min: float
    rho_max: float
    gamma_min: float
    gamma_max: float
    k0: float
    k1: float
    notes: tuple[str, ...] = field(default=())


def validate_flow(flow: FlowSpec) -> FlowReport:
    """Checks the standing hypotheses on rates and ratios; report-only, never raises.

    Flags: gamma_0 != 1, r_0 != 1, r_k < 2 for k >= 1, any rate ratio <= 1,
    gamma_max >= rho_min (Lipschitz-class growth cap), and eddies with
    h(0,0) != 0.
    """
    violations: list[str] = []
    notes: list[str] = []
    s0 = flow.scales[0]
    if abs(s0.gamma - 1.0) > 1e-12:
        violations.append(f"gamma_0 must equal 1, got {s0.gamma}")
    if abs(s0.r - 1.0) > 1e-12:
        violations.append(f"r_0 must equal 1, got {s0.r}")
    for k, s in enumerate(flow.scales[1:], start=1):
        if s.r < 2.0:
            violations.append(f"scale {k}: r must be >= 2 (rho_min >= 2), got {s.r}")
    gamma_min, gamma_max = flow.gamma_ratio_bounds()
    rho_min, rho_max = flow.rho_bounds()
    for k in range(len(flow.scales) - 1):
        ratio = flow.scales[k + 1].gamma / flow.scales[k].gamma
        if ratio <= 1.0:
            violations.append(f"rate ratio gamma_{k+1}/gamma_{k} must exceed 1, got {ratio}")
    if len(flow.scales) >= 2 and gamma_max >= rho_min:
        violations.append(
            f"gamma_max must stay below rho_min (alpha = 1), got {gamma_max} >= {rho_min}")
    k0 = 0.0
    k1 = 0.0
    for k, s in enumerate(flow.scales):
        ek0, ek1 = eddy_norms(s.eddy)
        k0 = max(k0, ek0)
        k1 = max(k1, ek1)
        origin = float(s.eddy.grid[0, 0])
        if origin != 0.0:
            violations.append(f"scale {k}: eddy must vanish at the origin, h(0,0) = {origin}")
        notes.extend(f"scale {k}: {note}" for note in s.eddy.notes)
    return FlowReport(
        compliant=not violations,
        violations=tuple(violations),
        rho_min=rho_min,
        rho_max=rho_max,
        gamma_min=gamma_min,
        gamma_max=gamma_max,
        k0=k0,
        k1=k1,
        notes=tuple(notes),
    )


def flow_to_json(flow: FlowSpec) -> str:
    """Serialize a flow; known eddy kinds round-trip by name, grids by samples."""
    scales = []
    for s in flow.scales:
        eddy: dict = {"kind": s.eddy.kind, "n": s.eddy.n}
        if s.eddy.kind not in ("cellular", "implosive", "shear", "zero"):
            eddy["kind"] = "grid"
            eddy["data"] = [float(v) for v in s.eddy.grid.ravel()]
        scales.append({"gamma": s.gamma, "r": s.r, "eddy": eddy})
    return json.dumps({"kappa": flow.kappa, "scales": scales}, sort_keys=True)


def flow_from_json(text: str | dict) -> FlowSpec:
    doc = json.loads(text) if isinstance(text, str) else text
    if not isinstance(doc, dict):
        raise ConfigurationError("flow document must be a JSON object")
    unknown = set(doc) - {"kappa", "scales"}
    if unknown:
        raise ConfigurationError(f"unknown key {sorted(unknown)[0]!r} in flow document")
    if "kappa" not in doc or "scales" not in doc:
        raise ConfigurationError("flow document needs 'kappa' and 'scales'")
    scales = []
    if not isinstance(doc["scales"], list) or not doc["scales"]:
        raise ConfigurationError("'scales' must be a non-empty list")
    for k, item in enumerate(doc["scales"]):
        unknown = set(item) - {"gamma", "r", "eddy"}
        if unknown:
            raise ConfigurationError(f"unknown key {sorted(unknown)[0]!r} in scale {k}")
        eddy_doc = item.get("eddy")
        if not isinstance(eddy_doc, dict):
            raise ConfigurationError(f"scale {k}: 'eddy' must be an object")
        unknown = set(eddy_doc) - {"kind", "n", "data"}
        if unknown:
            raise ConfigurationError(f"unknown key {sorted(unknown)[0]!r} in scale {k} eddy")
        kind = eddy_doc.get("kind")
        n = eddy_doc.get("n")
        if kind == "cellular":
            eddy = cellular_eddy(int(n))
        elif kind == "implosive":
            eddy = implosive_eddy(int(n))
        elif kind == "shear":
            eddy = shear_eddy(int(n))
        elif kind == "zero":
            eddy = zero_eddy(int(n) if n is not None else 8)
        elif kind == "grid":
            data = eddy_doc.get("data")
            if data is None:
                raise ConfigurationError(f"scale {k}: grid eddy needs 'data'")
            n = int(n)
            arr = np.asarray(data, dtype=float)
            if arr.size != n * n:
                raise ConfigurationError(
                    f"scale {k}: grid data has {arr.size} samples, expected {n * n}")
            eddy = Eddy(arr.reshape(n, n), kind="grid")
        else:
            raise ConfigurationError(f"scale {k}: unknown eddy kind {kind!r}")
        scales.append(Scale(float(item.get("gamma")), float(item.get("r")), eddy))
    return FlowSpec(float(doc["kappa"]), tuple(scales))
