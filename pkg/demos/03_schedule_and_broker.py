"""Power-capped task scheduling and a broker-in-the-loop simulation.

Run: python3 demos/03_schedule_and_broker.py
"""

import numpy as np

from cpgrid import (Broker, SparsityMask, SynthesisProblem, distribute_loads, four_bus_canonical,
                    max_gamma, random_taskset, run, simulate_closed_loop)
from cpgrid.commsim import expm_reference

tasks = random_taskset(seed=3, n=24, horizon=40, regions=4)
for policy in ("edf", "llf", "drp"):
    s = run(tasks, capacity=8.0, horizon=40, policy=policy).summary()
    print(f"{policy}: peak {s['peak_power']:.2f}, on time {s['completion_deadline_ratio']:.2f}, "
          f"missed {s['missed']}")

mask = SparsityMask(np.eye(4, dtype=bool) | np.eye(4, k=1, dtype=bool))
loads, unserved = distribute_loads(mask, tasks, capacity=8.0)
for ld in loads:
    print(f"controller {ld.controller}: regions {ld.regions}, {len(ld.tasks)} tasks, "
          f"cap {ld.capacity:.1f}")

model = four_bus_canonical()
K = max_gamma(SynthesisProblem(model, mask)).K
x0 = np.ones(model.n)
for delay in (0, 2):
    tr = simulate_closed_loop(model, K, Broker(mask, delay=delay), horizon=0.05, x0=x0)
    print(f"delay {delay} slots: |x(T)| = {np.linalg.norm(tr.x[-1]):.3e}, "
          f"{tr.messages[0]} messages per slot")
ref = expm_reference(model, K, x0, tr.t[-1])[0]
print(f"exact |x(T)| without delay: {np.linalg.norm(ref):.3e}")
