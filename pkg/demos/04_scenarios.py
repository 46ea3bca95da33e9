"""Run named scenarios and print their headline numbers.

Run: python3 demos/04_scenarios.py [scenario ...]   (default: the quick four-bus ones)
"""

import sys

from cpgrid import Settings, run_many

ids = sys.argv[1:] or ["ch2-s1", "ch2-s2", "ch5-s4"]
for rep in run_many(ids, Settings()):
    eig = max(z[0] for z in rep.closed_spectrum) if rep.closed_spectrum else float("nan")
    line = f"{rep.scenario:>12}: gamma {rep.gamma:10.4f}  closed max eig {eig:11.3f}"
    edf = (rep.scheduling or {}).get("edf")
    if edf:
        line += (f"  EDF peak power {edf['peak_power']:.3f},"
                 f" on time {edf['completion_deadline_ratio']:.2f}")
    print(line)
    for note in rep.notes:
        print(f"{'':>14}{note}")
