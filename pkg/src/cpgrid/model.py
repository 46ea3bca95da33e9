"""Linear state-space models of the islanded four-bus feeder and its extensions.

Two model families live here.  The *canonical* fixture is the literal pair of
matrices used for the delay-free topology studies (printed with a 10^3 factor).
The *parametric* builder assembles the nodal matrices from line/coupling
parameters and applies the state transformation that removes the derivative of
the DG voltage from the input channel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

Provenance = Literal["canonical_4bus", "parametric", "chain_extended"]


class ModelConstructionError(ValueError):
    """Raised when a model cannot be assembled from the supplied parameters."""


@dataclass(frozen=True)
class GridParams:
    """Series R-L chain with one coupling inductor per DG.

    ``line_R[i]``/``line_L[i]`` describe the branch feeding bus ``i+1``; the
    last entry is the load branch (its value tracks the load).
    """

    n_buses: int
    line_R: tuple[float, ...]
    line_L: tuple[float, ...]
    coupling_L: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "line_R", tuple(float(v) for v in self.line_R))
        object.__setattr__(self, "line_L", tuple(float(v) for v in self.line_L))
        object.__setattr__(self, "coupling_L", tuple(float(v) for v in self.coupling_L))
        n = self.n_buses
        if n < 1:
            raise ModelConstructionError(f"n_buses must be positive, got {n}")
        for name in ("line_R", "line_L", "coupling_L"):
            if len(getattr(self, name)) != n:
                raise ModelConstructionError(
                    f"{name} has {len(getattr(self, name))} entries, expected {n}")
        if any(v <= 0 for v in self.coupling_L):
            raise ModelConstructionError(f"coupling_L must be > 0, got {self.coupling_L}")
        if any(v < 0 for v in self.line_R):
            raise ModelConstructionError(f"line_R must be >= 0, got {self.line_R}")
        if any(v < 0 for v in self.line_L):
            raise ModelConstructionError(f"line_L must be >= 0, got {self.line_L}")

    def with_load(self, R: float, L: float | None = None) -> "GridParams":
        """Copy with the load branch (last entry) replaced."""
        R_ = list(self.line_R)
        L_ = list(self.line_L)
        R_[-1] = R
        if L is not None:
            L_[-1] = L
        return GridParams(self.n_buses, tuple(R_), tuple(L_), self.coupling_L)

    @classmethod
    def from_json(cls, doc: dict | str | Path) -> "GridParams":
        """Read ``n_buses, line_R, line_L, coupling_L, load_R, load_L``.

        ``line_R``/``line_L`` may either already include the load branch or
        stop one short, in which case ``load_R``/``load_L`` are appended.
        """
        if isinstance(doc, (str, Path)):
            doc = json.loads(Path(doc).read_text())
        n = int(doc["n_buses"])
        R = list(doc["line_R"])
        L = list(doc["line_L"])
        if len(R) == n - 1:
            R.append(doc["load_R"])
        elif "load_R" in doc:
            R[-1] = doc["load_R"]
        if len(L) == n - 1:
            L.append(doc["load_L"])
        elif "load_L" in doc:
            L[-1] = doc["load_L"]
        return cls(n, tuple(R), tuple(L), tuple(doc["coupling_L"]))

    def to_json(self) -> dict:
        return {
            "n_buses": self.n_buses,
            "line_R": list(self.line_R[:-1]),
            "line_L": list(self.line_L[:-1]),
            "coupling_L": list(self.coupling_L),
            "load_R": self.line_R[-1],
            "load_L": self.line_L[-1],
        }


# Microgrid table values; the load branch inductance 0.0148 H is the value that
# reproduces the worst-case (R_load = 0) system matrix entrywise.
CH4_PARAMS = GridParams(
    n_buses=4,
    line_R=(0.175, 0.1667, 0.2187, 0.0),
    line_L=(0.0005, 0.0004, 0.0006, 0.0148),
    coupling_L=(0.001, 0.001, 0.001, 0.001),
)

# Load resistances of the three operating zones (open-loop max eigenvalue
# 0, -21.958 and -42.454 respectively).
ZONE_LOADS = {"A1": 0.0, "A2": 0.35, "A3": 0.70}


@dataclass(frozen=True)
class StateSpaceModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    V_ref: float = 1.0
    provenance: Provenance = "parametric"
    # multiplier applied to raw LMI margins when reporting gamma
    gamma_scale: float = 1.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        B = np.array(self.B, dtype=float)
        C = np.array(self.C, dtype=float)
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[0] != n or C.shape[1] != n:
            raise ModelConstructionError(
                f"inconsistent shapes A{A.shape} B{B.shape} C{C.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B)) and np.all(np.isfinite(C))):
            raise ModelConstructionError("model matrices contain non-finite entries")
        for name, arr in (("A", A), ("B", B), ("C", C)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def open_loop_spectrum(self) -> np.ndarray:
        return sorted_spectrum(self.A)

    def to_json(self) -> dict:
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "V_ref": self.V_ref,
            "provenance": self.provenance,
            "gamma_scale": self.gamma_scale,
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "StateSpaceModel":
        return cls(np.array(doc["A"]), np.array(doc["B"]), np.array(doc["C"]),
                   doc.get("V_ref", 1.0), doc.get("provenance", "parametric"),
                   doc.get("gamma_scale", 1.0), doc.get("meta", {}))


@dataclass(frozen=True)
class NodalMatrices:
    T: np.ndarray
    T1: np.ndarray
    T2: np.ndarray
    T3: np.ndarray
    A_prime: np.ndarray
    B_prime: np.ndarray
    M_prime: np.ndarray


def sorted_spectrum(M) -> np.ndarray:
    """Eigenvalues ordered by real part, then imaginary part, both descending."""
    ev = np.linalg.eigvals(np.asarray(M, dtype=float))
    order = np.lexsort((-ev.imag, -ev.real))
    return ev[order]


def max_real_eig(M) -> float:
    return float(np.max(np.linalg.eigvals(np.asarray(M, dtype=float)).real))


_CANON_A = np.array([
    [0.1759, 0.1768, 0.5110, 1.0360],
    [-0.3500, -0.0000, -0.0000, -0.0000],
    [-0.5442, -0.4748, -0.4088, -0.8288],
    [-0.1197, -0.5546, -0.9688, -1.0775],
])
_CANON_B = np.array([
    [0.0008, 0.3342, 0.5251, -1.0360],
    [-0.3500, -0.0000, -0.0000, -0.0000],
    [-0.0693, -0.0661, -0.4201, -0.8288],
    [-0.4349, -0.4142, -0.1087, -1.0775],
])


def four_bus_canonical() -> StateSpaceModel:
    """The literal 4-bus (A, B) pair, already multiplied out by 10^3, C = I."""
    return StateSpaceModel(1e3 * _CANON_A, 1e3 * _CANON_B, np.eye(4),
                           provenance="canonical_4bus", gamma_scale=1e3)


def nodal_matrices(p: GridParams) -> NodalMatrices:
    n = p.n_buses
    R, L, Lc = map(np.asarray, (p.line_R, p.line_L, p.coupling_L))
    # row i couples to every upstream coupling inductor j <= i
    lower = np.tril(np.ones((n, n)))
    T = lower * np.outer(L, 1.0 / Lc) + np.eye(n) - np.eye(n, k=1)
    T1 = -lower * np.outer(R, 1.0 / Lc)
    T2 = -T1
    # sign fixed by moving the L_i/L_cj dV_c/dt terms of the nodal equations
    # to the right-hand side
    T3 = lower * np.outer(L, 1.0 / Lc)
    try:
        cond = np.linalg.cond(T)
        if not np.isfinite(cond) or cond > 1e14:
            raise np.linalg.LinAlgError
        Ap = np.linalg.solve(T, T1)
        Bp = np.linalg.solve(T, T2)
        Mp = np.linalg.solve(T, T3)
    except np.linalg.LinAlgError:
        raise ModelConstructionError(
            f"nodal matrix T is singular for line_L={p.line_L}, "
            f"coupling_L={p.coupling_L}") from None
    return NodalMatrices(T, T1, T2, T3, Ap, Bp, Mp)


def build_from_params(p: GridParams, V_ref: float = 1.0,
                      provenance: Provenance = "parametric"):
    """Assemble nodal matrices and the transformed model (A', A'M' + B', I)."""
    nm = nodal_matrices(p)
    A = nm.A_prime
    B = nm.A_prime @ nm.M_prime + nm.B_prime
    meta = {"params": p.to_json()}
    model = StateSpaceModel(A, B, np.eye(p.n_buses), V_ref, provenance, 1.0, meta)
    return nm, model


def chain_extend(n: int, template: GridParams = CH4_PARAMS) -> StateSpaceModel:
    """Extend the radial chain to ``n`` buses by cycling the template's lines.

    The template's last branch stays the load branch; the remaining line
    parameters repeat cyclically over buses ``1 .. n-1``.
    """
    if n < 2:
        raise ModelConstructionError(f"chain needs at least 2 buses, got {n}")
    k = template.n_buses - 1
    if n == template.n_buses or k == 0:
        R = [template.line_R[i % template.n_buses] for i in range(n)]
        L = [template.line_L[i % template.n_buses] for i in range(n)]
    else:
        R = [template.line_R[i % k] for i in range(n - 1)] + [template.line_R[-1]]
        L = [template.line_L[i % k] for i in range(n - 1)] + [template.line_L[-1]]
    Lc = [template.coupling_L[i % template.n_buses] for i in range(n)]
    params = GridParams(n, tuple(R), tuple(L), tuple(Lc))
    prov: Provenance = "parametric" if n == template.n_buses else "chain_extended"
    _, model = build_from_params(params, provenance=prov)
    lam = max_real_eig(model.A)
    meta = dict(model.meta, open_loop_max_real=lam, open_loop_unstable=bool(lam >= 0))
    return StateSpaceModel(model.A, model.B, model.C, model.V_ref, prov,
                           model.gamma_scale, meta)


def zone_model(zone: str, template: GridParams = CH4_PARAMS) -> StateSpaceModel:
    """Worst-case matrix of a load zone (``"A1"``, ``"A2"``, ``"A3"``)."""
    _, model = build_from_params(template.with_load(ZONE_LOADS[zone]))
    return StateSpaceModel(model.A, model.B, model.C, model.V_ref, model.provenance,
                           model.gamma_scale, dict(model.meta, zone=zone))


def _check_gain(model: StateSpaceModel, K) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.shape != (model.m, model.p):
        raise ValueError(f"K must be {model.m}x{model.p}, got {K.shape}")
    if not np.all(np.isfinite(K)):
        raise ValueError("K contains non-finite entries")
    return K


def closed_loop(model: StateSpaceModel, K):
    """Return (A + B K C, eigenvalues sorted by real part descending)."""
    K = _check_gain(model, K)
    Abar = model.A + model.B @ K @ model.C
    return Abar, sorted_spectrum(Abar)


def delay_closed_loop(model: StateSpaceModel, K, D):
    """First-order delay approximation (A+BKC)(I - B (D∘K) C).

    ``D`` is indexed like ``K`` (controller i, sensor j); a scalar means the
    same delay on every active link.
    """
    K = _check_gain(model, K)
    if np.isscalar(D):
        D = np.where(K != 0, float(D), 0.0)
    D = np.asarray(D, dtype=float)
    if D.shape != K.shape:
        raise ValueError(f"D must be {K.shape}, got {D.shape}")
    if np.any(D < 0):
        raise ValueError("delays must be non-negative")
    if np.any((K == 0) & (D != 0)):
        raise ValueError("D places a delay on a link that K does not use")
    Acl = model.A + model.B @ K @ model.C
    if not np.any(D):
        return Acl, sorted_spectrum(Acl)
    Abar = Acl @ (np.eye(model.n) - model.B @ (D * K) @ model.C)
    return Abar, sorted_spectrum(Abar)
