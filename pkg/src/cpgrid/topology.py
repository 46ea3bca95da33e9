"""Enumeration of sensor -> relay -> controller connection sets.

Nodes are 0-based internally; the tables in the thesis use 1-based digits,
see :func:`path_label`.  A *route* carries one sensor's data along a single
relay chain and may multicast to several controllers at the last hop.  Every
route expands into one path per receiving controller.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from typing import Iterable, Literal, Sequence

import numpy as np

Objective = Literal["reliability", "cost", "user_requirement"]
Path_ = tuple[int, ...]


@dataclass(frozen=True)
class UserRequirement:
    """Fan-out and in-degree bounds, each as ``{node: (lo, hi)}``.

    ``region_fanout`` applies to nodes of the last relay layer (how many
    controllers a region's data must reach); ``controller_indegree`` applies to
    controllers.
    """

    region_fanout: dict[int, tuple[int, int]] = field(default_factory=dict)
    controller_indegree: dict[int, tuple[int, int]] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"region_fanout": {str(k): list(v) for k, v in self.region_fanout.items()},
                "controller_indegree": {str(k): list(v)
                                        for k, v in self.controller_indegree.items()}}

    @classmethod
    def from_json(cls, doc: dict) -> "UserRequirement":
        return cls({int(k): tuple(v) for k, v in doc.get("region_fanout", {}).items()},
                   {int(k): tuple(v) for k, v in doc.get("controller_indegree", {}).items()})


@dataclass(frozen=True)
class ConstraintSet:
    """Connection parameter ``[bwc cc cnc prc]`` plus routing options.

    ``bwc=None`` removes the bandwidth constraint, ``cc=None`` the receive
    window and ``prc=None`` the peripheral cap.  ``cnc=0`` is vacuous.
    ``constraint_layer`` is the layer index holding the resource constraint.
    """

    bwc: int | None = 1
    cc: int | None = None
    cnc: int = 0
    prc: int | None = None
    user_requirement: UserRequirement | None = None
    constraint_layer: int = 0

    def __post_init__(self):
        for name in ("bwc", "cc", "cnc", "prc"):
            v = getattr(self, name)
            if v is not None and (int(v) != v or v < 0):
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")

    @classmethod
    def from_parameter(cls, code: str | Sequence[int], **kw) -> "ConstraintSet":
        """Parse a connection parameter such as ``"3303"`` or ``[3, 3, 0, 3]``."""
        digits = [int(c) for c in code] if isinstance(code, str) else list(code)
        if len(digits) != 4:
            raise ValueError(f"connection parameter needs 4 digits, got {code!r}")
        bwc, cc, cnc, prc = digits
        return cls(bwc=bwc, cc=cc, cnc=cnc, prc=prc, **kw)

    @property
    def parameter(self) -> str:
        return "".join(str(v if v is not None else 0)
                       for v in (self.bwc, self.cc, self.cnc, self.prc))

    def to_json(self) -> dict:
        return {"bwc": self.bwc, "cc": self.cc, "cnc": self.cnc, "prc": self.prc,
                "constraint_layer": self.constraint_layer,
                "user_requirement": (self.user_requirement.to_json()
                                     if self.user_requirement else None)}

    @classmethod
    def from_json(cls, doc: dict) -> "ConstraintSet":
        ur = doc.get("user_requirement")
        return cls(doc.get("bwc", 1), doc.get("cc"), doc.get("cnc", 0), doc.get("prc"),
                   UserRequirement.from_json(ur) if ur else None,
                   doc.get("constraint_layer", 0))


@dataclass(frozen=True)
class LayeredNetwork:
    """Layer sizes (sensors first, controllers last) and next-hop adjacency."""

    sizes: tuple[int, ...]
    adjacency: tuple[np.ndarray, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"need >= 2 layers of positive size, got {sizes}")
        adj = tuple(np.array(a, dtype=bool) for a in self.adjacency)
        if len(adj) != len(sizes) - 1:
            raise ValueError("one adjacency matrix per consecutive layer pair")
        for k, a in enumerate(adj):
            if a.shape != (sizes[k], sizes[k + 1]):
                raise ValueError(f"adjacency {k} has shape {a.shape}, "
                                 f"expected {(sizes[k], sizes[k + 1])}")
            a.setflags(write=False)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "adjacency", adj)

    @property
    def n_layers(self) -> int:
        return len(self.sizes)

    @property
    def n_sensors(self) -> int:
        return self.sizes[0]

    @property
    def n_controllers(self) -> int:
        return self.sizes[-1]

    @classmethod
    def banded(cls, sizes: Sequence[int], cc: int | None = None) -> "LayeredNetwork":
        """Node ``j`` of layer ``l+1`` receives from nodes within index distance ``cc``."""
        adj = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            i, j = np.meshgrid(range(a), range(b), indexing="ij")
            adj.append(np.ones((a, b), bool) if cc is None else np.abs(i - j) <= cc)
        return cls(tuple(sizes), tuple(adj))

    def edge(self, layer: int, u: int, v: int, cc: int | None = None) -> bool:
        if not self.adjacency[layer][u, v]:
            return False
        return cc is None or abs(u - v) <= cc

    def to_json(self) -> dict:
        return {"sizes": list(self.sizes),
                "adjacency": [a.astype(int).tolist() for a in self.adjacency]}

    @classmethod
    def from_json(cls, doc: dict) -> "LayeredNetwork":
        return cls(tuple(doc["sizes"]), tuple(np.array(a, bool) for a in doc["adjacency"]))


@dataclass(frozen=True)
class ConnectionSet:
    """Full sensor -> ... -> controller paths that coexist."""

    paths: tuple[Path_, ...]
    n_sensors: int
    n_controllers: int
    label: str = ""

    @property
    def total_hops(self) -> int:
        return sum(len(p) - 1 for p in self.paths)

    @property
    def n_paths(self) -> int:
        return len(self.paths)

    def to_json(self) -> list[list[int]]:
        return [list(p) for p in self.paths]


@dataclass(frozen=True)
class SparsityMask:
    """``allowed[i, j]`` is true iff controller ``i`` receives sensor ``j``."""

    allowed: np.ndarray

    def __post_init__(self):
        a = np.array(self.allowed, dtype=bool)
        if a.ndim != 2:
            raise ValueError("mask must be a 2-D matrix")
        a.setflags(write=False)
        object.__setattr__(self, "allowed", a)

    def __array__(self, dtype=None, copy=None):
        return self.allowed if dtype is None else self.allowed.astype(dtype)

    def __eq__(self, other):
        return isinstance(other, SparsityMask) and np.array_equal(self.allowed, other.allowed)

    def __hash__(self):
        return hash((self.allowed.shape, self.allowed.tobytes()))

    @property
    def shape(self):
        return self.allowed.shape

    @cached_property
    def key(self) -> tuple[int, ...]:
        return tuple(self.allowed.astype(int).ravel())

    @classmethod
    def full(cls, m: int, p: int) -> "SparsityMask":
        return cls(np.ones((m, p), bool))

    @classmethod
    def from_gain(cls, K, tol: float = 0.0) -> "SparsityMask":
        return cls(np.abs(np.asarray(K, dtype=float)) > tol)

    def without(self, links: Iterable[tuple[int, int]]) -> "SparsityMask":
        a = self.allowed.copy()
        for i, j in links:
            a[i, j] = False
        return SparsityMask(a)

    def to_csv(self) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(self.allowed.astype(int).tolist())
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SparsityMask":
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        return cls(np.array([[int(v) for v in r] for r in rows], bool))


def path_label(nodes: Sequence[int]) -> str:
    """1-based digit string, e.g. ``(0, 1, 0) -> "121"``."""
    return "".join(str(n + 1) for n in nodes)


# -- paths -------------------------------------------------------------------

def enumerate_paths(net: LayeredNetwork, cs: ConstraintSet | None = None) -> list[Path_]:
    """All sensor -> controller paths, lexicographic by node indices."""
    cc = cs.cc if cs is not None else None
    paths: list[Path_] = [(s,) for s in range(net.n_sensors)]
    for layer in range(net.n_layers - 1):
        paths = [p + (v,) for p in paths for v in range(net.sizes[layer + 1])
                 if net.edge(layer, p[-1], v, cc)]
    return paths


def bandwidth_filter(paths: Sequence[Path_], cs: ConstraintSet) -> list[Path_]:
    """Project paths onto the layers free of the resource constraint.

    The constrained layer is assigned later (one element per route under the
    bandwidth rule), so here it is excised and the remaining partial paths are
    de-duplicated.  Without a bandwidth constraint the paths pass unchanged.
    """
    if cs.bwc is None:
        return list(paths)
    h = _constraint_layer(cs, len(paths[0]) if paths else 0)
    return sorted({p[:h] + p[h + 1:] for p in paths})


def _constraint_layer(cs: ConstraintSet, n_layers: int) -> int:
    h = cs.constraint_layer
    if h < 0:
        h += n_layers
    return h


# -- complete sets -------------------------------------------------------------

@dataclass(frozen=True)
class Subgroup:
    """One member of a division: a relay chain plus the fixed end of the route."""

    division: int
    chain: Path_          # relay nodes, layers 1 .. L-2
    sensor: int | None    # fixed when the constraint sits at the controllers
    fanout: tuple[int, ...] | None  # fixed when the constraint sits at the sensors

    @property
    def label(self) -> str:
        if self.sensor is not None:
            return path_label((self.sensor,) + self.chain)
        return ".".join(str(n + 1) for n in self.chain)


def _fanout_options(net: LayeredNetwork, cs: ConstraintSet, relay: int,
                    objective: Objective) -> list[tuple[int, ...]]:
    L = net.n_layers
    adj = [c for c in range(net.n_controllers) if net.edge(L - 2, relay, c, cs.cc)]
    if not adj:
        return []
    if objective == "reliability":
        return [tuple(adj)]
    lo, hi = 1, len(adj)
    ur = cs.user_requirement
    if objective == "user_requirement" and ur is not None and relay in ur.region_fanout:
        lo, hi = ur.region_fanout[relay]
        lo = max(lo, 1)
    opts = []
    for k in range(lo, min(hi, len(adj)) + 1):
        opts.extend(itertools.combinations(adj, k))
    return sorted(opts)


def _chains(net: LayeredNetwork, cs: ConstraintSet, start: int) -> list[Path_]:
    """Relay chains (layers 1 .. L-2) starting at relay ``start`` of layer 1."""
    chains: list[Path_] = [(start,)]
    for layer in range(1, net.n_layers - 2):
        chains = [c + (v,) for c in chains for v in range(net.sizes[layer + 1])
                  if net.edge(layer, c[-1], v, cs.cc)]
    return chains


def divisions(paths: Sequence[Path_], net: LayeredNetwork, cs: ConstraintSet,
              objective: Objective = "reliability") -> dict[int, list[Subgroup]]:
    """Group filtered partial paths by their node in the layer nearest the constraint.

    With the constraint at the sensors each subgroup is a relay chain and its
    controller fan-out (named after its relay indices, e.g. ``2.3``); with the
    constraint at the controllers each subgroup is a sensor-rooted chain (e.g.
    ``343``).
    """
    L = net.n_layers
    if L < 3:
        raise ValueError("relay routing needs at least one relay layer; use cbscd")
    h = _constraint_layer(cs, L)
    full = len(paths[0]) == L if paths else False
    out: dict[int, list[Subgroup]] = {}
    if h == 0:
        # partial path = relays + controller
        chains = sorted({(p[1:-1] if full else p[:-1]) for p in paths})
        for ch in chains:
            for fo in _fanout_options(net, cs, ch[-1], objective):
                out.setdefault(ch[0], []).append(Subgroup(ch[0], ch, None, fo))
    elif h == L - 1:
        # partial path = sensor + relays
        prefixes = sorted({(p[:-1] if full else p) for p in paths})
        for pre in prefixes:
            s, ch = pre[0], pre[1:]
            out.setdefault(ch[-1], []).append(Subgroup(ch[-1], ch, s, None))
        for k in out:
            out[k].sort(key=lambda g: (g.sensor,) + g.chain)
    else:
        raise ValueError(f"constraint layer must be the first or last layer, got {h}")
    return dict(sorted(out.items()))


def _relay_usage_ok(usage: list[dict[int, int]], chain: Path_, bwc: int | None) -> bool:
    if bwc is None:
        return True
    return all(usage[k].get(n, 0) < bwc for k, n in enumerate(chain))


def coexisting_subgroups(divs: dict[int, list[Subgroup]], bwc: int | None = 1
                         ) -> list[tuple[Subgroup, ...]]:
    """One subgroup per division with no resource reuse beyond ``bwc``.

    Sensors (when fixed in the subgroup) are never shared between routes.
    Divisions are visited in index order and members in listing order, so the
    output order is lexicographic in the subgroup labels.
    """
    keys = list(divs)
    if not keys:
        return []
    depth = len(next(iter(divs.values()))[0].chain)
    out: list[tuple[Subgroup, ...]] = []
    usage = [dict() for _ in range(depth)]
    sensors: set[int] = set()
    chosen: list[Subgroup] = []

    def rec(i):
        if i == len(keys):
            out.append(tuple(chosen))
            return
        for g in divs[keys[i]]:
            if g.sensor is not None and g.sensor in sensors:
                continue
            if not _relay_usage_ok(usage, g.chain, bwc):
                continue
            for k, n in enumerate(g.chain):
                usage[k][n] = usage[k].get(n, 0) + 1
            if g.sensor is not None:
                sensors.add(g.sensor)
            chosen.append(g)
            rec(i + 1)
            chosen.pop()
            if g.sensor is not None:
                sensors.discard(g.sensor)
            for k, n in enumerate(g.chain):
                usage[k][n] -= 1

    rec(0)
    return out


def _central(c: int, nc: int) -> bool:
    return 0 < c < nc - 1


def _indegree_ok(indeg: Sequence[int], cs: ConstraintSet, objective: Objective) -> bool:
    nc = len(indeg)
    ur = cs.user_requirement
    if ur is not None:
        for c, (lo, hi) in ur.controller_indegree.items():
            if not lo <= indeg[c] <= hi:
                return False
    if objective == "cost":
        for c, k in enumerate(indeg):
            if _central(c, nc):
                if 0 < k < cs.cnc:
                    return False
            elif cs.prc is not None and k > cs.prc:
                return False
    return True


def layer_assignments(v: tuple[Subgroup, ...], net: LayeredNetwork, cs: ConstraintSet,
                      objective: Objective = "reliability") -> list[tuple]:
    """Complete the layer holding the constraint for one coexisting combination.

    Sensors constrained: a distinct sensor per division (tuple of sensors in
    division order).  Controllers constrained: a fan-out per division (tuple of
    controller tuples) respecting the requirement.
    """
    if v and v[0].sensor is None:
        opts = [[s for s in range(net.n_sensors) if net.edge(0, s, g.chain[0], cs.cc)]
                for g in v]
        return [w for w in itertools.product(*opts) if len(set(w)) == len(w)]
    L = net.n_layers
    opts = [_fanout_options(net, cs, g.chain[-1], objective) for g in v]
    out = []
    for w in itertools.product(*opts):
        indeg = [0] * net.n_controllers
        for fo in w:
            for c in fo:
                indeg[c] += 1
        if _indegree_ok(indeg, cs, objective):
            out.append(w)
    del L
    return out


def _assemble(v: tuple[Subgroup, ...], w: tuple) -> list[Path_]:
    paths = []
    for g, x in zip(v, w):
        if g.sensor is None:
            paths.extend((x,) + g.chain + (c,) for c in g.fanout)
        else:
            paths.extend((g.sensor,) + g.chain + (c,) for c in x)
    return sorted(paths)


def complete_sets(paths: Sequence[Path_], net: LayeredNetwork, cs: ConstraintSet,
                  secondary_objective: Objective = "reliability") -> list[ConnectionSet]:
    """All complete coexisting connection sets (v x w combinations).

    Order: v-combinations in table order, then w in table order; for the cost
    objective the result is stably re-sorted by the number of paths.
    """
    if secondary_objective not in ("reliability", "cost", "user_requirement"):
        raise ValueError(f"unknown objective {secondary_objective!r}")
    divs = divisions(paths, net, cs, secondary_objective)
    sets: list[ConnectionSet] = []
    for vi, v in enumerate(coexisting_subgroups(divs, cs.bwc)):
        ws = layer_assignments(v, net, cs, secondary_objective)
        for wi, w in enumerate(ws):
            if v[0].sensor is None:
                indeg = [0] * net.n_controllers
                for g in v:
                    for c in g.fanout:
                        indeg[c] += 1
                if not _indegree_ok(indeg, cs, secondary_objective):
                    continue
            sets.append(ConnectionSet(tuple(_assemble(v, w)), net.n_sensors,
                                      net.n_controllers, f"v{vi + 1}w{wi + 1}"))
    if secondary_objective == "cost":
        sets.sort(key=lambda s: s.n_paths)
    return sets


def mask_from_set(s: ConnectionSet) -> SparsityMask:
    a = np.zeros((s.n_controllers, s.n_sensors), bool)
    for p in s.paths:
        a[p[-1], p[0]] = True
    return SparsityMask(a)


# -- direct sensor -> controller design (no relays) ----------------------------

def _window(i: int, ns: int, cc: int | None) -> list[int]:
    return [j for j in range(ns) if cc is None or abs(i - j) <= cc]


def cost_configurations(cs: ConstraintSet, ns: int, nc: int) -> list[tuple[int, ...]]:
    """Per-controller incoming-connection counts compatible with the cost rules.

    Counts sum to ``ns * bwc``; peripheral controllers (first and last) take
    at most ``prc``; central ones take none or at least ``cnc``; no controller
    takes more sensors than its receive window offers.
    """
    bwc = cs.bwc if cs.bwc is not None else 1
    total = ns * bwc
    ranges = []
    for i in range(nc):
        cap = len(_window(i, ns, cs.cc))
        if _central(i, nc):
            vals = [0] + list(range(max(cs.cnc, 1), cap + 1))
        else:
            hi = cap if cs.prc is None else min(cap, cs.prc)
            vals = list(range(0, hi + 1))
        ranges.append(vals)
    out = []

    def rec(i, acc, left):
        if i == nc:
            if left == 0:
                out.append(tuple(acc))
            return
        for v in ranges[i]:
            if v > left:
                break
            acc.append(v)
            rec(i + 1, acc, left - v)
            acc.pop()

    rec(0, [], total)
    return out


def cbscd(ns: int, nc: int, cs: ConstraintSet) -> list[SparsityMask]:
    """Constraint-based direct sensor-controller design.

    For every cost configuration the generators are connected in ascending
    order of cost; each partial assignment keeps sensor fan-out <= bwc, and a
    final pass keeps only assignments where every sensor is served exactly
    ``bwc`` times.  Masks are returned de-duplicated in lexicographic order.
    """
    bwc = cs.bwc if cs.bwc is not None else 1
    found: set[tuple[int, ...]] = set()
    for config in cost_configurations(cs, ns, nc):
        order = sorted(range(nc), key=lambda i: (config[i], i))
        partial: list[tuple[frozenset[int], ...]] = [tuple(frozenset() for _ in range(nc))]
        load = [[0] * ns]
        for g in order:
            opts = list(itertools.combinations(_window(g, ns, cs.cc), config[g]))
            nxt, nxt_load = [], []
            for rows, used in zip(partial, load):
                for opt in opts:
                    if any(used[j] >= bwc for j in opt):
                        continue
                    u = list(used)
                    for j in opt:
                        u[j] += 1
                    r = list(rows)
                    r[g] = frozenset(opt)
                    nxt.append(tuple(r))
                    nxt_load.append(u)
            partial, load = nxt, nxt_load
            if not partial:
                break
        for rows, used in zip(partial, load):
            if all(u == bwc for u in used):
                a = np.zeros((nc, ns), int)
                for i, r in enumerate(rows):
                    a[i, list(r)] = 1
                found.add(tuple(a.ravel()))
    return [SparsityMask(np.array(k, bool).reshape(nc, ns)) for k in sorted(found)]


# -- fixtures -------------------------------------------------------------------

def load_fixture(name: str) -> tuple[LayeredNetwork, ConstraintSet, dict]:
    """Load ``"ch2_network"`` or ``"ch5_network"`` from the packaged data."""
    text = resources.files("cpgrid").joinpath("data", f"{name}.json").read_text()
    doc = json.loads(text)
    return (LayeredNetwork.from_json(doc["network"]),
            ConstraintSet.from_json(doc["constraints"]), doc)
