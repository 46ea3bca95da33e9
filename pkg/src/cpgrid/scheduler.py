"""Slot-based peak-load scheduling under a power cap.

Time advances in unit slots and preemption happens only at slot boundaries.
At every slot the active tasks are ranked by the policy's priority (higher
runs first, ties to the lower id) and admitted greedily while the power cap
holds; a lower-ranked task that still fits the remaining headroom runs too.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, replace
from typing import Iterable, Literal, Sequence

import numpy as np

Policy = Literal["edf", "llf", "drp"]
POLICIES: tuple[str, ...] = ("edf", "llf", "drp")


@dataclass
class Task:
    id: int
    r: int
    d: int
    c: int
    P: float
    region: int = 0
    c_rem: int | None = None
    priority: float | None = None
    state: str = "off"
    finish: int | None = None
    infeasible: bool = False

    def __post_init__(self):
        if self.r > self.d:
            raise ValueError(f"task {self.id}: arrival {self.r} after deadline {self.d}")
        if self.c < 1:
            raise ValueError(f"task {self.id}: execution time must be >= 1")
        if not self.P > 0:
            raise ValueError(f"task {self.id}: power must be positive")
        if self.c_rem is None:
            self.c_rem = self.c
        if not 0 <= self.c_rem <= self.c:
            raise ValueError(f"task {self.id}: c_rem outside [0, c]")

    @property
    def active(self) -> bool:
        return self.state in ("hold", "running")

    def fresh(self) -> "Task":
        return replace(self, c_rem=self.c, priority=None, state="off", finish=None,
                       infeasible=False)


def priority(task: Task, t: int, policy: Policy) -> float:
    """Priority of an arrived task at slot ``t`` (larger runs first).

    EDF uses ``-d``; LLF uses minus the slack ``(d - t) - c_rem``; DRP scales
    the task's current priority by ``1 - (d - c_rem) / t``, seeded with the
    task's power and left unchanged at ``t = 0``.
    """
    if policy == "edf":
        return -float(task.d)
    if policy == "llf":
        return -float((task.d - t) - task.c_rem)
    if policy == "drp":
        cur = task.P if task.priority is None else task.priority
        if t == 0:
            return float(cur)
        return float(cur * (1.0 - (task.d - task.c_rem) / t))
    raise ValueError(f"unknown policy {policy!r}")


def slack(task: Task, t: int) -> int:
    return (task.d - t) - task.c_rem


@dataclass
class SlotRecord:
    slot: int
    running: tuple[int, ...]
    power: float
    hold: tuple[int, ...]
    completed: tuple[int, ...]
    infeasible: tuple[int, ...] = ()


def step(tasks: Sequence[Task], t: int, capacity: float, policy: Policy) -> SlotRecord:
    """Advance every task by one slot in place and return the slot record."""
    if not capacity > 0:
        raise ValueError("capacity must be positive")
    for task in tasks:
        if task.state == "off" and task.r <= t:
            task.state = "hold"
            if task.priority is None:
                task.priority = task.P if policy == "drp" else None
    active = [task for task in tasks if task.active]
    for task in active:
        task.priority = priority(task, t, policy)
        if task.P > capacity:
            task.infeasible = True
    order = sorted(active, key=lambda x: (-x.priority, x.id))
    load = 0.0
    running, hold, done, bad = [], [], [], []
    for task in order:
        if task.infeasible:
            task.state = "hold"
            bad.append(task.id)
            hold.append(task.id)
        elif load + task.P <= capacity:
            load += task.P
            task.state = "running"
            running.append(task.id)
        else:
            task.state = "hold"
            hold.append(task.id)
    for task in active:
        if task.state == "running":
            task.c_rem -= 1
            if task.c_rem == 0:
                task.state = "completed"
                task.finish = t + 1
                done.append(task.id)
    return SlotRecord(t, tuple(sorted(running)), load, tuple(sorted(hold)),
                      tuple(sorted(done)), tuple(sorted(bad)))


@dataclass
class ScheduleTrace:
    policy: str
    capacity: float
    records: list[SlotRecord]
    tasks: list[Task]

    @property
    def power(self) -> np.ndarray:
        return np.array([r.power for r in self.records], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["slot", "running_ids", "power"])
        for r in self.records:
            w.writerow([r.slot, " ".join(map(str, r.running)), repr(float(r.power))])
        return buf.getvalue()

    def summary(self) -> dict:
        m = metrics(self)
        return {"policy": self.policy,
                "capacity": None if math.isinf(self.capacity) else self.capacity,
                "slots": len(self.records), **m}


def run(taskset: Iterable[Task], capacity: float, horizon: int,
        policy: Policy = "edf") -> ScheduleTrace:
    """Simulate ``horizon`` slots on copies of ``taskset``."""
    tasks = sorted((t.fresh() for t in taskset), key=lambda x: x.id)
    if tasks and horizon < max(t.d for t in tasks):
        raise ValueError("horizon must cover the latest deadline")
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    records = [step(tasks, t, capacity, policy) for t in range(horizon)]
    return ScheduleTrace(policy, capacity, records, tasks)


def metrics(trace: ScheduleTrace) -> dict:
    n = len(trace.tasks)
    on_time = [t for t in trace.tasks if t.finish is not None and t.finish <= t.d]
    missed = sorted(t.id for t in trace.tasks if t.finish is None or t.finish > t.d)
    return {"peak_power": float(trace.power.max()) if trace.records else 0.0,
            "completion_deadline_ratio": len(on_time) / n if n else 1.0,
            "missed": missed,
            "infeasible": sorted(t.id for t in trace.tasks if t.infeasible)}


def uncapped_profile(taskset: Iterable[Task], horizon: int) -> np.ndarray:
    """Power profile when every task runs from arrival without interruption."""
    prof = np.zeros(horizon)
    for t in taskset:
        prof[t.r:min(t.r + t.c, horizon)] += t.P
    return prof


# -- load distribution -----------------------------------------------------------

@dataclass
class ControllerLoad:
    controller: int
    tasks: list[Task]
    capacity: float
    regions: tuple[int, ...]


def distribute_loads(mask, tasks: Iterable[Task], capacity: float = 1.0
                     ) -> tuple[list[ControllerLoad], list[Task]]:
    """Assign each region's tasks to the controllers receiving that region's sensor.

    Tasks of a region are dealt round-robin (by id) across its connected
    controllers.  A controller's capacity is the global capacity times the
    share of sensors it receives.  Tasks of regions with no connected
    controller are returned separately as unservable.
    """
    allowed = np.asarray(getattr(mask, "allowed", mask), dtype=bool)
    m, p = allowed.shape
    per: list[list[Task]] = [[] for _ in range(m)]
    unserved = []
    by_region: dict[int, list[Task]] = {}
    for t in sorted(tasks, key=lambda x: x.id):
        by_region.setdefault(t.region, []).append(t)
    for j, group in sorted(by_region.items()):
        ctrls = np.flatnonzero(allowed[:, j]) if 0 <= j < p else np.array([], int)
        if ctrls.size == 0:
            unserved.extend(group)
            continue
        for k, t in enumerate(group):
            per[int(ctrls[k % ctrls.size])].append(t)
    loads = []
    for i in range(m):
        regs = tuple(int(j) for j in np.flatnonzero(allowed[i]))
        loads.append(ControllerLoad(i, per[i], capacity * len(regs) / p, regs))
    return loads, unserved


# -- task sets --------------------------------------------------------------------

def random_taskset(seed: int, n: int = 20, horizon: int = 48, max_c: int = 6,
                   max_P: float = 5.0, regions: int = 1, integer_power: bool = False
                   ) -> list[Task]:
    """Seeded random task set with deadlines inside ``horizon``."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        c = int(rng.integers(1, max_c + 1))
        r = int(rng.integers(0, max(1, horizon - c)))
        d = int(rng.integers(r + c, horizon + 1))
        P = float(rng.integers(1, int(max_P) + 1)) if integer_power \
            else float(np.round(rng.uniform(0.5, max_P), 3))
        out.append(Task(i, r, d, c, P, int(rng.integers(0, regions))))
    return out


def tasks_to_csv(tasks: Iterable[Task]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "r", "d", "c", "P", "region"])
    for t in tasks:
        w.writerow([t.id, t.r, t.d, t.c, repr(float(t.P)), t.region])
    return buf.getvalue()


def tasks_from_csv(text: str) -> list[Task]:
    rows = csv.DictReader(io.StringIO(text))
    out = []
    for row in rows:
        out.append(Task(int(row["id"]), int(row["r"]), int(row["d"]), int(row["c"]),
                        float(row["P"]), int(row.get("region") or 0)))
    return out


def trace_summary_json(trace: ScheduleTrace) -> str:
    return json.dumps(trace.summary(), sort_keys=True)
