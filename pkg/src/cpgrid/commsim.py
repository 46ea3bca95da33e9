"""Publish/subscribe loop between bus sensors, the broker and the controllers.

A logical clock counts slots; one slot is one integration step.  Inside a
slot the four Runge-Kutta stages each run a full round: sensors publish the
stage's measurements, the broker hands them to subscribed controllers whose
link delay has elapsed, controllers publish their commands, and the grid
integrator consumes them.  With zero delays this is exactly classical RK4 on
``A + B K C``.
"""

from __future__ import annotations

import csv
import heapq
import io
import json
import re
import socket
from dataclasses import dataclass, field

import numpy as np

from .model import StateSpaceModel, closed_loop

_TOPIC = re.compile(r"^(sensor|controller)/(\d+)$")
DIVERGENCE_NORM = 1e12


class TopicError(ValueError):
    """Unknown or out-of-range topic."""


class SimulationDiverged(RuntimeError):
    def __init__(self, msg, trajectory=None):
        super().__init__(msg)
        self.trajectory = trajectory


@dataclass(frozen=True)
class Message:
    topic: str
    value: float
    slot: int
    stage: int = 0

    def encode(self) -> bytes:
        """One NDJSON line: ``{"topic": ..., "value": ..., "slot": ...}``."""
        return (json.dumps({"topic": self.topic, "value": float(self.value),
                            "slot": int(self.slot)}) + "\n").encode()

    @classmethod
    def decode(cls, line: bytes | str, stage: int = 0) -> "Message":
        doc = json.loads(line)
        return cls(str(doc["topic"]), float(doc["value"]), int(doc["slot"]), stage)


@dataclass(frozen=True)
class Delivery:
    target: str
    source: str
    value: float
    slot: int
    stage: int = 0


@dataclass
class Broker:
    """Routes ``sensor/<j>`` to every ``controller/<i>`` with ``mask[i, j]``.

    ``delay`` is a scalar or an ``m x p`` integer array of per-link slot
    delays.  Controller commands go to the grid (target ``"grid"``) at once.
    ``tls``, ``auth`` and ``last_will`` are accepted for configuration parity
    and have no effect.
    """

    mask: np.ndarray
    delay: np.ndarray | int = 0
    tls: bool = False
    auth: str | None = None
    last_will: str | None = None
    _queue: list = field(default_factory=list, repr=False)
    _seq: int = 0
    published: int = 0
    expected: int = 0
    delivered: int = 0

    def __post_init__(self):
        self.mask = np.array(getattr(self.mask, "allowed", self.mask), dtype=bool)
        m, p = self.mask.shape
        d = np.broadcast_to(np.asarray(self.delay, dtype=int), (m, p)).copy()
        if (d < 0).any():
            raise ValueError("delays must be non-negative")
        self.delay = d

    @property
    def m(self) -> int:
        return self.mask.shape[0]

    @property
    def p(self) -> int:
        return self.mask.shape[1]

    def subscribers(self, j: int) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.mask[:, j])]

    def parse(self, topic: str) -> tuple[str, int]:
        mt = _TOPIC.match(topic)
        if not mt:
            raise TopicError(f"unknown topic {topic!r}; expected sensor/<j> or controller/<i>")
        kind, idx = mt.group(1), int(mt.group(2))
        limit = self.p if kind == "sensor" else self.m
        if idx >= limit:
            raise TopicError(f"topic {topic!r} out of range (have {limit} {kind}s)")
        return kind, idx

    def route(self, msg: Message) -> list[Delivery]:
        """Deliveries scheduled for ``msg`` (no state change)."""
        kind, idx = self.parse(msg.topic)
        if kind == "controller":
            return [Delivery("grid", msg.topic, msg.value, msg.slot, msg.stage)]
        return [Delivery(f"controller/{i}", msg.topic, msg.value,
                         msg.slot + int(self.delay[i, idx]), msg.stage)
                for i in self.subscribers(idx)]

    def publish(self, msg: Message) -> list[Delivery]:
        out = self.route(msg)
        self.published += 1
        self.expected += len(out)
        for dv in out:
            heapq.heappush(self._queue, (dv.slot, dv.stage, self._seq, dv))
            self._seq += 1
        return out

    def due(self, slot: int, stage: int) -> list[Delivery]:
        """Pop deliveries due at or before ``(slot, stage)`` in FIFO order."""
        out = []
        while self._queue and (self._queue[0][0], self._queue[0][1]) <= (slot, stage):
            out.append(heapq.heappop(self._queue)[3])
        self.delivered += len(out)
        return out

    @property
    def pending(self) -> int:
        return len(self._queue)


def broker_route(msg: Message, state: Broker) -> list[Delivery]:
    return state.route(msg)


class WireLink:
    """Carries messages as NDJSON over a local stream socket pair."""

    def __init__(self):
        self._w, self._r = socket.socketpair()
        self._buf = b""

    def send(self, msg: Message) -> None:
        self._w.sendall(msg.encode())

    def recv(self, stage: int = 0) -> Message:
        while b"\n" not in self._buf:
            chunk = self._r.recv(65536)
            if not chunk:
                raise ConnectionError("wire closed")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return Message.decode(line, stage)

    def close(self):
        self._w.close()
        self._r.close()


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    messages: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n, m = self.x.shape[1], self.u.shape[1]
        w.writerow(["t"] + [f"x_{k + 1}" for k in range(n)] + [f"u_{k + 1}" for k in range(m)])
        for ti, xi, ui in zip(self.t, self.x, self.u):
            w.writerow([repr(float(ti))] + [repr(float(v)) for v in xi]
                       + [repr(float(v)) for v in ui])
        return buf.getvalue()


def default_dt(model: StateSpaceModel, K) -> float:
    """``0.1 / |max real eigenvalue|`` of the closed loop, capped by ``1 / spectral radius``."""
    _, lam = closed_loop(model, K)
    rad = float(np.abs(lam).max())
    cands = []
    mr = abs(float(lam.real.max()))
    if mr > 0:
        cands.append(0.1 / mr)
    if rad > 0:
        cands.append(1.0 / rad)
    return min(cands) if cands else 1.0


_RK = ((0.0, 0.0), (0.5, 0.5), (0.5, 0.5), (1.0, 1.0))


def simulate_closed_loop(model: StateSpaceModel, K, broker: Broker, dt: float | None = None,
                         horizon: float = 1.0, x0=None, wire: bool = False) -> Trajectory:
    """Integrate ``x' = A x + B u`` with ``u`` assembled from broker deliveries.

    Controllers hold the last value received from each sensor (zero before
    the first arrival) and apply ``u_i = sum_j K_ij y_j``.
    """
    K = np.asarray(K, dtype=float)
    if K.shape != broker.mask.shape:
        raise ValueError("gain and broker mask shapes differ")
    if np.any((K != 0) & ~broker.mask):
        raise ValueError("gain has entries on links the broker does not route")
    A, B, C = model.A, model.B, model.C
    n = model.n
    if dt is None:
        dt = default_dt(model, K)
    steps = int(np.ceil(horizon / dt - 1e-9))
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    held = np.zeros((broker.m, broker.p))
    link = WireLink() if wire else None

    def exchange(xs, slot, stage):
        y = C @ xs
        for j in range(broker.p):
            msg = Message(f"sensor/{j}", float(y[j]), slot, stage)
            if link is not None:
                link.send(msg)
                msg = link.recv(stage)
            broker.publish(msg)
        for dv in broker.due(slot, stage):
            i = int(dv.target.split("/")[1])
            j = int(dv.source.split("/")[1])
            held[i, j] = dv.value
        u = np.empty(broker.m)
        for i in range(broker.m):
            cmd = Message(f"controller/{i}", float(K[i] @ held[i]), slot, stage)
            if link is not None:
                link.send(cmd)
                cmd = link.recv(stage)
            (dv,) = broker.route(cmd)
            u[i] = dv.value
        return u

    ts = np.arange(steps + 1) * dt
    xs = np.empty((steps + 1, n))
    us = np.zeros((steps + 1, broker.m))
    msgs = np.zeros(steps + 1, dtype=int)
    xs[0] = x
    try:
        for k in range(steps):
            before = broker.published
            ks = []
            for stage, (cx, _) in enumerate(_RK):
                xst = x if stage == 0 else x + cx * dt * ks[-1]
                u = exchange(xst, k, stage)
                if stage == 0:
                    us[k] = u
                ks.append(A @ xst + B @ u)
            x = x + dt / 6.0 * (ks[0] + 2 * ks[1] + 2 * ks[2] + ks[3])
            xs[k + 1] = x
            msgs[k] = broker.published - before
            nx = float(np.linalg.norm(x))
            if not np.isfinite(nx) or nx > DIVERGENCE_NORM:
                traj = Trajectory(ts[:k + 2], xs[:k + 2], us[:k + 2], msgs[:k + 2])
                raise SimulationDiverged(
                    f"state norm {nx:.3e} exceeded {DIVERGENCE_NORM:.0e} at t={ts[k + 1]:.6g}",
                    traj)
        us[steps] = np.einsum("ij,ij->i", K, held)
    finally:
        if link is not None:
            link.close()
    return Trajectory(ts, xs, us, msgs)


def expm_reference(model: StateSpaceModel, K, x0, t) -> np.ndarray:
    """``x(t) = expm((A + B K C) t) x0`` at the given times."""
    from scipy.linalg import expm

    Abar, _ = closed_loop(model, K)
    return np.array([expm(Abar * ti) @ np.asarray(x0, float) for ti in np.atleast_1d(t)])
