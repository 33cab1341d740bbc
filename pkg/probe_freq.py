import time

from eddylab.fields import cellular_eddy, self_similar_flow, zero_flow
from eddylab.mc import SimConfig, simulate_exit, event_frequency_from_samples, flow_delta

t0 = time.time()
flow = self_similar_flow(1.0, cellular_eddy(256), 2.0, 4.0, 8)
delta = flow_delta(flow)
print("flow delta:", delta, flush=True)

samples = []
for r in (4.0, 16.0, 64.0):
    cfg = SimConfig(n_particles=2000, seed=999, dt_factor=0.5, max_steps=2_000_000)
    s = simulate_exit(flow, r, cfg)
    samples.append(s)
    print(f"flow r={r}: mean={s.mean:.4f} stderr={s.stderr:.4f} censored={s.censored} "
          f"({time.time()-t0:.0f}s)", flush=True)

tab = event_frequency_from_samples(samples, delta)
prev = None
for row in tab.rows:
    misses = round((1.0 - row.frequency) * row.n)
    overlap = "" if prev is None else f" overlap_prev={row.ci_hi >= prev.ci_lo}"
    print(f"flow r={row.r}: thr={row.threshold:.2f} freq={row.frequency:.4f} "
          f"ci=[{row.ci_lo:.4f},{row.ci_hi:.4f}] misses={misses}{overlap}", flush=True)
    prev = row
print("flow nondecreasing:", tab.nondecreasing, flush=True)

zf = zero_flow(1.0)
zsamples = []
for r in (4.0, 16.0, 64.0):
    cfg = SimConfig(n_particles=1000, seed=424242, dt_factor=0.5, max_steps=2_000_000)
    s = simulate_exit(zf, r, cfg)
    zsamples.append(s)
    print(f"zero r={r}: mean={s.mean:.4f} ({time.time()-t0:.0f}s)", flush=True)
ztab = event_frequency_from_samples(zsamples, delta)
for row in ztab.rows:
    print(f"zero r={row.r}: freq={row.frequency:.4f} ci=[{row.ci_lo:.4f},{row.ci_hi:.4f}]", flush=True)
print(f"done {time.time()-t0:.0f}s", flush=True)
