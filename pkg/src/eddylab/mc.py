"""Lagrangian Monte Carlo: exit times, pair separation, anomalous exponents.

Euler-Maruyama with the drift of the truncated stream and diffusion
sqrt(2 kappa). Noise is drawn per step for the full particle width from a
counter-based generator keyed by (seed, step block), so the numbers a
particle sees depend only on (seed, step, particle index) and never on how
many particles are still alive; runs are bit-reproducible and the active
set can shrink without touching the streams. Drift, by contrast, is only
evaluated at live positions, which is what keeps long tails affordable.

Censored particles (still inside at max_steps) are excluded from means and
reported; keep max_steps generous, the exclusion biases means low.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox

from .errors import ConfigurationError, StatisticalError
from .fields import FlowSpec, VelocitySampler, eddy_norms

_INIT_TAG = 0xA5A5
_NOISE_TAG = 1
_BLOCK = 64           # steps per noise draw; mapping step -> numbers is fixed
_WILSON_Z = 1.96


@dataclass(frozen=True)
class SimConfig:
    """Simulation knobs; dt comes from the flow via the stability rule.

    dt = dt_factor * min(advective crossing of the finest scale / 8,
    diffusive limit so sqrt(2 kappa dt) <= finest scale / 8, and the
    per-scale turnover times). Statistical estimators downstream insist on
    n_particles >= 100.
    """

    n_particles: int
    seed: int
    dt_factor: float = 0.5
    max_steps: int = 1_000_000
    scale_truncation: int | None = None

    def __post_init__(self):
        if int(self.n_particles) != self.n_particles or self.n_particles < 1:
            raise ConfigurationError(f"n_particles must be a positive integer, got {self.n_particles}")
        if int(self.seed) != self.seed or not (0 <= self.seed < 2 ** 64):
            raise ConfigurationError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if not (0.0 < self.dt_factor <= 1.0):
            raise ConfigurationError(f"dt_factor must lie in (0, 1], got {self.dt_factor}")
        if int(self.max_steps) != self.max_steps or self.max_steps < 1:
            raise ConfigurationError(f"max_steps must be a positive integer, got {self.max_steps}")
        if self.scale_truncation is not None and (
                int(self.scale_truncation) != self.scale_truncation or self.scale_truncation < 0):
            raise ConfigurationError(
                f"scale_truncation must be a nonnegative integer or None, got {self.scale_truncation}")


def truncation_index(flow: FlowSpec, r: float, cfg: SimConfig) -> int:
    """Largest scale index to include: explicit override or R_k <= 8r."""
    if cfg.scale_truncation is not None:
        if cfg.scale_truncation >= flow.n_scales:
            raise ConfigurationError(
                f"scale_truncation {cfg.scale_truncation} exceeds the flow's "
                f"{flow.n_scales} scales")
        return cfg.scale_truncation
    radii = flow.radii()
    idx = 0
    for k, rk in enumerate(radii):
        if rk <= 8.0 * r:
            idx = k
    return idx


def sim_dt(flow: FlowSpec, r: float, cfg: SimConfig) -> float:
    """Stable time step for the truncated flow; see SimConfig."""
    n_max = truncation_index(flow, r, cfg)
    radii = flow.radii()
    sampler = VelocitySampler(flow, n_max)
    v_max = sampler.speed_bound()
    finest = min(radii[: n_max + 1])
    limits = [finest * finest / (128.0 * flow.kappa)]
    if v_max > 0.0:
        limits.append(0.125 * finest / v_max)
    for k in range(n_max + 1):
        s = flow.scales[k]
        _, k1 = eddy_norms(s.eddy)
        if s.gamma * k1 > 0.0:
            limits.append((radii[k] / (s.gamma * k1)) ** 2)
    return cfg.dt_factor * min(limits)


@dataclass(frozen=True)
class ExitTimeSample:
    """Exit times from one run; NaN marks censored particles."""

    r: float
    l: float | None
    times: np.ndarray
    start_points: np.ndarray
    faces: np.ndarray
    mean: float
    stderr: float
    censored: int
    n_particles: int
    dt: float
    n_truncation: int
    seed: int

    @property
    def n_uncensored(self) -> int:
        return self.n_particles - self.censored

    @property
    def l_face_fraction(self) -> float:
        if self.l is None or self.n_particles == 0:
            return 0.0
        return float(np.count_nonzero(self.faces == "l") / self.n_particles)

    @property
    def l_limit_ok(self) -> bool:
        """False when >5% of exits hit the l-face, i.e. l was too small."""
        return self.l_face_fraction <= 0.05


def _finish_sample(r, l, times, starts, faces, n, dt, n_max, seed) -> ExitTimeSample:
    good = ~np.isnan(times)
    censored = int(n - good.sum())
    if censored == n:
        raise StatisticalError(
            f"all {n} particles censored at max_steps; increase max_steps "
            f"(dt={dt:.3e})")
    vals = times[good]
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else math.inf
    times.flags.writeable = False
    starts.flags.writeable = False
    faces.flags.writeable = False
    return ExitTimeSample(r=r, l=l, times=times, start_points=starts, faces=faces,
                          mean=mean, stderr=stderr, censored=censored,
                          n_particles=n, dt=dt, n_truncation=n_max, seed=seed)


def _disk_rejection(gen: Generator, n: int, r: float) -> np.ndarray:
    """Uniform points in the disk of radius r, rejection from the square."""
    out = np.empty((n, 2))
    filled = 0
    while filled < n:
        batch = max(n - filled, 64)
        pts = r * (2.0 * gen.random((int(batch * 1.5), 2)) - 1.0)
        keep = pts[(pts * pts).sum(axis=1) < r * r]
        take = min(n - filled, keep.shape[0])
        out[filled:filled + take] = keep[:take]
        filled += take
    return out


def _pair_rejection(gen: Generator, n: int, r: float, l: float) -> np.ndarray:
    """Uniform on {(y,z): |y-z| < r, |y|^2+|z|^2 < l^2}.

    Draw uniformly in the 4-ball of radius l (Gaussian direction, radius
    l U^{1/4}), then reject on the separation constraint.
    """
    out = np.empty((n, 4))
    filled = 0
    attempts = 0
    while filled < n:
        batch = max(2 * (n - filled), 256)
        g = gen.standard_normal((batch, 4))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        rad = l * gen.random(batch) ** 0.25
        pts = g * rad[:, None]
        sep = pts[:, :2] - pts[:, 2:]
        keep = pts[(sep * sep).sum(axis=1) < r * r]
        take = min(n - filled, keep.shape[0])
        out[filled:filled + take] = keep[:take]
        filled += take
        attempts += batch
        if attempts > 10_000 * n and filled == 0:
            raise StatisticalError(
                f"pair start sampling accepted nothing after {attempts} draws "
                f"(r={r}, l={l}); the separation constraint is too tight")
    return out


def _crossing_fraction(pos, step_vec, rsq):
    """Fraction s in (0, 1] with |pos + s step|^2 = rsq (outbound root)."""
    a = (step_vec * step_vec).sum(axis=1)
    b = 2.0 * (pos * step_vec).sum(axis=1)
    c = (pos * pos).sum(axis=1) - rsq
    disc = np.maximum(b * b - 4.0 * a * c, 0.0)
    denom = np.where(a > 0.0, 2.0 * a, 1.0)
    s = (-b + np.sqrt(disc)) / denom
    return np.clip(s, 0.0, 1.0)


def simulate_exit(flow: FlowSpec, r: float, cfg: SimConfig) -> ExitTimeSample:
    """Exit times from the disk |y| < r, started uniformly inside.

    Exit is detected on the first step ending at |y| >= r; the crossing
    time is interpolated linearly within that step.
    """
    if not (r > 0.0 and math.isfinite(r)):
        raise ConfigurationError(f"exit radius must be positive and finite, got {r}")
    n_max = truncation_index(flow, r, cfg)
    dt = sim_dt(flow, r, cfg)
    sampler = VelocitySampler(flow, n_max)
    n = int(cfg.n_particles)
    init = Generator(Philox(key=[cfg.seed, _INIT_TAG]))
    starts = _disk_rejection(init, n, r)

    y = starts.copy()
    times = np.full(n, np.nan)
    alive = np.ones(n, dtype=bool)
    diff = math.sqrt(2.0 * flow.kappa * dt)
    rsq = r * r
    step = 0
    n_blocks = -(-cfg.max_steps // _BLOCK)
    for block in range(n_blocks):
        if not alive.any():
            break
        gen = Generator(Philox(key=[cfg.seed, _NOISE_TAG], counter=[0, 0, 0, block]))
        noise = gen.standard_normal((_BLOCK, n, 2))
        for s_loc in range(_BLOCK):
            if step >= cfg.max_steps or not alive.any():
                break
            idx = np.flatnonzero(alive)
            pos = y[idx]
            v1, v2 = sampler(pos[:, 0], pos[:, 1])
            move = np.empty_like(pos)
            move[:, 0] = dt * v1
            move[:, 1] = dt * v2
            move += diff * noise[s_loc, idx]
            new = pos + move
            out = (new * new).sum(axis=1) >= rsq
            if out.any():
                frac = _crossing_fraction(pos[out], move[out], rsq)
                times[idx[out]] = (step + frac) * dt
                alive[idx[out]] = False
            y[idx] = np.where(out[:, None], pos, new)
            step += 1
    faces = np.where(np.isnan(times), "censored", "r").astype("U8")
    return _finish_sample(r, None, times, starts, faces, n, dt, n_max, cfg.seed)


def default_pair_l(flow: FlowSpec, r: float) -> float:
    """l = max(4r, next scale above n(r)); approximates the unconstrained pair."""
    radii = flow.radii()
    n_r = 0
    for k, rk in enumerate(radii):
        if rk <= r:
            n_r = k
    upper = radii[n_r + 1] if n_r + 1 < len(radii) else radii[-1]
    return max(4.0 * r, upper)


def simulate_pair(flow: FlowSpec, r: float, l: float | None, cfg: SimConfig) -> ExitTimeSample:
    """Separation times for particle pairs: same drift, independent noise.

    The pair leaves when |y-z| >= r (face "sep") or |y|^2+|z|^2 >= l^2
    (face "l"); starts are uniform on the product domain. l-face exits mean
    the run only approximates the unconstrained separation problem, so
    their fraction is tracked and l_limit_ok flags runs above 5%.
    """
    if not (r > 0.0 and math.isfinite(r)):
        raise ConfigurationError(f"separation radius must be positive and finite, got {r}")
    if l is None:
        l = default_pair_l(flow, r)
    if l < 4.0 * r:
        raise ConfigurationError(f"pair domain needs l >= 4r, got l={l} for r={r}")
    n_max = truncation_index(flow, r, cfg)
    dt = sim_dt(flow, r, cfg)
    sampler = VelocitySampler(flow, n_max)
    n = int(cfg.n_particles)
    init = Generator(Philox(key=[cfg.seed, _INIT_TAG]))
    starts = _pair_rejection(init, n, r, l)

    u = starts.copy()
    times = np.full(n, np.nan)
    faces = np.full(n, "censored", dtype="U8")
    alive = np.ones(n, dtype=bool)
    diff = math.sqrt(2.0 * flow.kappa * dt)
    rsq = r * r
    lsq = l * l
    step = 0
    n_blocks = -(-cfg.max_steps // _BLOCK)
    for block in range(n_blocks):
        if not alive.any():
            break
        gen = Generator(Philox(key=[cfg.seed, _NOISE_TAG], counter=[0, 0, 0, block]))
        noise = gen.standard_normal((_BLOCK, n, 4))
        for s_loc in range(_BLOCK):
            if step >= cfg.max_steps or not alive.any():
                break
            idx = np.flatnonzero(alive)
            pos = u[idx]
            move = np.empty_like(pos)
            vy1, vy2 = sampler(pos[:, 0], pos[:, 1])
            vz1, vz2 = sampler(pos[:, 2], pos[:, 3])
            move[:, 0] = dt * vy1
            move[:, 1] = dt * vy2
            move[:, 2] = dt * vz1
            move[:, 3] = dt * vz2
            move += diff * noise[s_loc, idx]
            new = pos + move
            sep_new = new[:, :2] - new[:, 2:]
            out_sep = (sep_new * sep_new).sum(axis=1) >= rsq
            out_l = (new * new).sum(axis=1) >= lsq
            out = out_sep | out_l
            if out.any():
                pos_o = pos[out]
                move_o = move[out]
                s_sep = np.full(pos_o.shape[0], np.inf)
                s_l = np.full(pos_o.shape[0], np.inf)
                osep = out_sep[out]
                ol = out_l[out]
                if osep.any():
                    sep_pos = pos_o[osep, :2] - pos_o[osep, 2:]
                    sep_mv = move_o[osep, :2] - move_o[osep, 2:]
                    s_sep[osep] = _crossing_fraction(sep_pos, sep_mv, rsq)
                if ol.any():
                    s_l[ol] = _crossing_fraction(pos_o[ol], move_o[ol], lsq)
                first = np.minimum(s_sep, s_l)
                times[idx[out]] = (step + first) * dt
                faces[idx[out]] = np.where(s_sep <= s_l, "sep", "l")
                alive[idx[out]] = False
            u[idx] = np.where(out[:, None], pos, new)
            step += 1
    return _finish_sample(r, l, times, starts, faces, n, dt, n_max, cfg.seed)


@dataclass(frozen=True)
class NuRow:
    r: float
    nu_point: float
    nu_err: float
    mean: float
    stderr: float
    n_uncensored: int


@dataclass(frozen=True)
class NuTable:
    """Per-radius exponents and the global log-log fit.

    slope estimates d ln tau / d ln r by weighted least squares with the
    per-point uncertainty stderr/mean; nu_hat = 2 - slope. prediction is
    ln(gamma ratio)/ln(rho) when the flow is self-similar, else None.
    """

    rows: tuple[NuRow, ...]
    slope: float
    slope_err: float
    nu_hat: float
    nu_hat_err: float
    prediction: float | None


def _self_similar_prediction(flow: FlowSpec) -> float | None:
    if flow.n_scales < 2:
        return None
    radii = flow.radii()
    gammas = [s.gamma for s in flow.scales]
    g_ratios = [gammas[k + 1] / gammas[k] for k in range(flow.n_scales - 1)]
    rhos = [radii[k + 1] / radii[k] for k in range(flow.n_scales - 1)]
    if max(g_ratios) - min(g_ratios) > 1e-12 * max(g_ratios):
        return None
    if max(rhos) - min(rhos) > 1e-12 * max(rhos):
        return None
    return math.log(g_ratios[0]) / math.log(rhos[0])


def estimate_nu(samples, flow: FlowSpec | None = None) -> NuTable:
    """Anomalous exponent table: nu(r) = 2 - ln(mean tau)/ln r per radius.

    Needs at least 3 radii spanning a decade, each sample with a majority
    of uncensored particles and at least 100 of them.
    """
    samples = list(samples)
    if len(samples) < 3:
        raise ConfigurationError(f"exponent fit needs >= 3 radii, got {len(samples)}")
    radii = [s.r for s in samples]
    if any(radii[i] >= radii[i + 1] for i in range(len(radii) - 1)):
        raise ConfigurationError("samples must be ordered by strictly increasing r")
    if radii[-1] / radii[0] < 10.0:
        raise ConfigurationError(
            f"radii span {radii[-1] / radii[0]:.2f}x, need at least a decade")
    for s in samples:
        if s.n_particles < 100:
            raise StatisticalError(
                f"r={s.r:g}: {s.n_particles} particles, statistical claims need >= 100")
        if s.censored * 2 > s.n_particles:
            raise StatisticalError(
                f"r={s.r:g}: {s.censored}/{s.n_particles} censored; majority must exit")

    rows = []
    for s in samples:
        lr = math.log(s.r)
        nu = 2.0 - math.log(s.mean) / lr
        err = s.stderr / (s.mean * lr)
        rows.append(NuRow(r=s.r, nu_point=nu, nu_err=err, mean=s.mean,
                          stderr=s.stderr, n_uncensored=s.n_uncensored))

    x = np.log(radii)
    yv = np.log([s.mean for s in samples])
    sig = np.array([s.stderr / s.mean for s in samples])
    w = 1.0 / (sig * sig)
    xb = float((w * x).sum() / w.sum())
    yb = float((w * yv).sum() / w.sum())
    sxx = float((w * (x - xb) ** 2).sum())
    slope = float((w * (x - xb) * (yv - yb)).sum() / sxx)
    slope_err = math.sqrt(1.0 / sxx)
    pred = _self_similar_prediction(flow) if flow is not None else None
    return NuTable(rows=tuple(rows), slope=slope, slope_err=slope_err,
                   nu_hat=2.0 - slope, nu_hat_err=slope_err, prediction=pred)


@dataclass(frozen=True)
class EventRow:
    r: float
    threshold: float
    frequency: float
    ci_lo: float
    ci_hi: float
    n: int


@dataclass(frozen=True)
class EventFrequencyTable:
    rows: tuple[EventRow, ...]
    delta: float

    @property
    def nondecreasing(self) -> bool:
        f = [row.frequency for row in self.rows]
        return all(f[i] <= f[i + 1] for i in range(len(f) - 1))


def _wilson(k: int, n: int) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    z = _WILSON_Z
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(center - half, 0.0), min(center + half, 1.0)


def flow_delta(flow: FlowSpec) -> float:
    """Fast-mixing margin 0.9 ln(gamma_min)/ln(rho_max) from the rate ratios."""
    if flow.n_scales < 2:
        raise ConfigurationError("delta needs at least two scales to form ratios")
    g_lo, _ = flow.gamma_ratio_bounds()
    _, rho_hi = flow.rho_bounds()
    return 0.9 * math.log(g_lo) / math.log(rho_hi)


def event_frequency_from_samples(samples, delta: float) -> EventFrequencyTable:
    """Fraction of particles with tau <= r^(2-delta); censored count as misses."""
    rows = []
    for s in samples:
        if s.n_particles < 100:
            raise StatisticalError(
                f"r={s.r:g}: {s.n_particles} particles, statistical claims need >= 100")
        thr = s.r ** (2.0 - delta)
        good = ~np.isnan(s.times)
        k = int(np.count_nonzero(s.times[good] <= thr))
        lo, hi = _wilson(k, s.n_particles)
        rows.append(EventRow(r=s.r, threshold=thr, frequency=k / s.n_particles,
                             ci_lo=lo, ci_hi=hi, n=s.n_particles))
    return EventFrequencyTable(rows=tuple(rows), delta=delta)


def event_frequency(flow: FlowSpec, r_list, delta: float | None,
                    cfg: SimConfig) -> EventFrequencyTable:
    """Simulate each radius and tabulate the fast-mixing event frequency."""
    if delta is None:
        delta = flow_delta(flow)
    samples = [simulate_exit(flow, float(r), cfg) for r in r_list]
    return event_frequency_from_samples(samples, delta)


def sample_rows(sample: ExitTimeSample):
    """Per-particle rows (particle_id, exit_time, censored, exit_face)."""
    for i in range(sample.n_particles):
        t = sample.times[i]
        censored = int(np.isnan(t))
        yield (i, 0.0 if censored else float(t), censored, str(sample.faces[i]))


def sample_summary(sample: ExitTimeSample, extras: dict | None = None) -> dict:
    """Summary block for JSON export; seed and config echo live here."""
    out = {
        "r": sample.r,
        "l": sample.l,
        "n": sample.n_particles,
        "mean": sample.mean,
        "stderr": sample.stderr,
        "censored": sample.censored,
        "dt": sample.dt,
        "scale_truncation": sample.n_truncation,
        "seed": sample.seed,
    }
    if sample.l is not None:
        out["l_face_fraction"] = sample.l_face_fraction
    if extras:
        out.update(extras)
    return out
