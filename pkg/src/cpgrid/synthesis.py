"""Lyapunov-based stability-margin maximization over structured gains.

For a fixed ``P`` solving ``(A - beta I) P + P (A - beta I)^T = -I`` the margin

    S(K, gamma) = A^T P + P A + (B K C)^T P + P B K C + gamma I  < 0

is affine in ``K``, so the best margin is ``gamma* = -min_K lambda_max(S(K, 0))``
over gains that respect the sparsity mask and the norm bound.  Two solvers are
provided: an interior-point conic route through cvxpy (default) and a
smoothed first-order route written here, used as a cross-check.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
import scipy.linalg as sla

from .model import StateSpaceModel, closed_loop, delay_closed_loop
from .topology import ConnectionSet, ConstraintSet, SparsityMask, cbscd

NormMode = Literal["squared", "spectral"]


class SynthesisError(RuntimeError):
    """Numerical failure of a synthesis solve."""


class InfeasibleError(SynthesisError):
    """The program has no strictly feasible point."""


def lyapunov_P(A, beta: float) -> np.ndarray:
    """Solve ``(A - beta I) P + P (A - beta I)^T = -I``."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    As = A - beta * np.eye(n)
    lam = np.linalg.eigvals(As).real.max()
    if lam >= 0:
        raise SynthesisError(
            f"A - beta*I is not stable (max real eigenvalue {lam:.6g}); "
            f"increase beta above {beta + lam:.6g}")
    P = sla.solve_continuous_lyapunov(As, -np.eye(n))
    return 0.5 * (P + P.T)


def lyapunov_residual(A, beta: float, P) -> float:
    As = np.asarray(A, float) - beta * np.eye(len(A))
    return float(np.linalg.norm(As @ P + P @ As.T + np.eye(len(A)), "fro"))


def norm_radius(rho: float, norm_mode: NormMode) -> float:
    """Spectral-norm radius implied by ``rho``.

    ``"squared"`` bounds ``K K^T <= rho I`` (radius ``sqrt(rho)``);
    ``"spectral"`` bounds ``||K||_2 <= rho``.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    if norm_mode == "squared":
        return float(np.sqrt(rho))
    if norm_mode == "spectral":
        return float(rho)
    raise ValueError(f"unknown norm_mode {norm_mode!r}")


@dataclass
class SynthesisProblem:
    model: StateSpaceModel
    mask: SparsityMask | None = None
    beta: float = 5000.0
    rho: float = 5.0
    norm_mode: NormMode = "squared"
    alpha: float | None = None
    delay: float | None = None

    def __post_init__(self):
        if self.mask is None:
            self.mask = SparsityMask.full(self.model.m, self.model.p)
        if self.mask.shape != (self.model.m, self.model.p):
            raise ValueError(f"mask shape {self.mask.shape} does not match "
                             f"gain shape {(self.model.m, self.model.p)}")
        if self.rho <= 0:
            raise ValueError("rho must be positive")

    @property
    def radius(self) -> float:
        return norm_radius(self.rho, self.norm_mode)


@dataclass
class SolverReport:
    method: str
    status: str
    iterations: int
    residual: float
    seconds: float

    def to_json(self) -> dict:
        return {"method": self.method, "status": self.status, "iterations": self.iterations,
                "residual": self.residual, "seconds": self.seconds}


@dataclass
class SynthesisResult:
    K: np.ndarray
    gamma: float
    P: np.ndarray
    closed_spectrum: np.ndarray
    report: SolverReport
    gamma_raw: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def max_real(self) -> float:
        return float(self.closed_spectrum.real.max())

    def to_json(self) -> dict:
        return {"K": np.asarray(self.K).tolist(), "gamma": self.gamma,
                "gamma_raw": self.gamma_raw,
                "spectrum": [[float(z.real), float(z.imag)] for z in self.closed_spectrum],
                "solver_report": self.report.to_json(), "extra": self.extra}


# -- helpers -------------------------------------------------------------------

def _sym(M):
    return 0.5 * (M + M.T)


def lmi_matrix(model: StateSpaceModel, P, K, gamma_raw: float = 0.0) -> np.ndarray:
    """Symmetric part of ``S(K, gamma)`` (raw, unscaled gamma)."""
    A, B, C = model.A, model.B, model.C
    BKC = B @ np.asarray(K, float) @ C
    S = A.T @ P + P @ A + BKC.T @ P + P @ BKC
    return _sym(S) + gamma_raw * np.eye(model.n)


def margin_of(model: StateSpaceModel, P, K) -> float:
    """Largest raw gamma for which ``S(K, gamma) < 0`` holds: ``-lambda_max(S(K, 0))``."""
    return float(-np.linalg.eigvalsh(lmi_matrix(model, P, K)).max())


def project_mask_ball(K, mask: np.ndarray, radius: float, iters: int = 200,
                      tol: float = 1e-13) -> np.ndarray:
    """Euclidean projection onto ``{K : K[~mask] = 0, ||K||_2 <= radius}`` (Dykstra)."""
    X = np.where(mask, K, 0.0)
    if np.linalg.norm(X, 2) <= radius:
        # projection onto the subspace already lies in the ball
        return X
    p = np.zeros_like(X)
    q = np.zeros_like(X)
    for _ in range(iters):
        Y = _ball(X + p, radius)
        p = X + p - Y
        Xn = np.where(mask, Y + q, 0.0)
        q = Y + q - Xn
        if np.linalg.norm(Xn - X) <= tol * max(1.0, radius):
            X = Xn
            break
        X = Xn
    # the final iterate sits in the subspace; pull it into the ball exactly
    s = np.linalg.norm(X, 2)
    return X if s <= radius else X * (radius / s)


def _ball(K, radius):
    U, s, Vt = np.linalg.svd(K, full_matrices=False)
    return (U * np.minimum(s, radius)) @ Vt


def _finish(prob: SynthesisProblem, P, K, method, status, iters, t0, extra=None
            ) -> SynthesisResult:
    model = prob.model
    mask = np.asarray(prob.mask.allowed)
    K = np.where(mask, np.asarray(K, float), 0.0)
    r = prob.radius
    s = np.linalg.norm(K, 2) if K.size else 0.0
    if s > r:
        K = K * (r / s)
    g = margin_of(model, P, K)
    _, spec = closed_loop(model, K)
    resid = float(np.linalg.eigvalsh(lmi_matrix(model, P, K, g - 1e-6)).max())
    rep = SolverReport(method, status, iters, resid, time.perf_counter() - t0)
    return SynthesisResult(K, g * model.gamma_scale, P, spec, rep, g, extra or {})


# -- conic route ------------------------------------------------------------------

class _ConicCache:
    """Compiled cvxpy program per (model, beta, radius) with the mask as a parameter."""

    def __init__(self):
        self._store: dict = {}

    def get(self, model: StateSpaceModel, P, radius: float):
        key = (id(model), model.A.tobytes(), model.B.tobytes(), radius, P.tobytes())
        hit = self._store.get(key)
        if hit is not None:
            return hit
        import cvxpy as cp

        n, m, p = model.n, model.m, model.p
        Kv = cp.Variable((m, p))
        Mp = cp.Parameter((m, p), nonneg=True)
        g = cp.Variable()
        K = cp.multiply(Mp, Kv)
        A, B, C = model.A, model.B, model.C
        G = _sym(A.T @ P + P @ A)
        H = (P @ B) @ K @ C
        S = G + H + H.T + g * np.eye(n)
        cons = [0.5 * (S + S.T) << 0, cp.sigma_max(K) <= radius]
        problem = cp.Problem(cp.Maximize(g), cons)
        hit = (problem, Kv, Mp, K)
        self._store[key] = hit
        return hit

    def clear(self):
        self._store.clear()


_CONIC = _ConicCache()


def _solve_conic(prob: SynthesisProblem, P) -> SynthesisResult:
    import cvxpy as cp

    t0 = time.perf_counter()
    model = prob.model
    mask = np.asarray(prob.mask.allowed)
    if not mask.any():
        return _finish(prob, P, np.zeros(mask.shape), "closed_form", "optimal", 0, t0)
    problem, Kv, Mp, Kexpr = _CONIC.get(model, P, prob.radius)
    Mp.value = mask.astype(float)
    try:
        # warm starts reuse the previous solver object and perturb the last digits
        problem.solve(solver=cp.CLARABEL, warm_start=False)
    except cp.error.SolverError as exc:
        raise SynthesisError(f"conic solver failed: {exc}") from exc
    if problem.status not in ("optimal", "optimal_inaccurate") or Kexpr.value is None:
        raise SynthesisError(f"conic solver status {problem.status}")
    iters = int(problem.solver_stats.num_iters or 0)
    return _finish(prob, P, Kexpr.value, "conic", problem.status, iters, t0)


# -- first-order route ---------------------------------------------------------------

def _smooth_lmax(S, mu):
    w, V = np.linalg.eigh(S)
    z = (w - w.max()) / mu
    e = np.exp(z)
    wt = e / e.sum()
    val = w.max() + mu * np.log(e.sum())
    return val, (V * wt) @ V.T


def _solve_first_order(prob: SynthesisProblem, P, iters: int = 12000) -> SynthesisResult:
    """Accelerated projected gradient on a log-sum-exp smoothing of ``lambda_max``.

    Starts from ``K = 0`` and shrinks the smoothing parameter geometrically;
    the best exact margin seen along the way is returned.
    """
    t0 = time.perf_counter()
    model = prob.model
    mask = np.asarray(prob.mask.allowed)
    if not mask.any():
        return _finish(prob, P, np.zeros(mask.shape), "closed_form", "optimal", 0, t0)
    A, B, C = model.A, model.B, model.C
    G = _sym(A.T @ P + P @ A)
    PB = P @ B
    r = prob.radius
    scale = max(np.abs(np.linalg.eigvalsh(G)).max(), 1e-300)
    # gradient of <Q, S> with respect to K is 2 B^T P Q C^T
    lip_base = 4.0 * np.linalg.norm(PB, 2) ** 2 * np.linalg.norm(C, 2) ** 2
    K = np.zeros(mask.shape)
    Y = K.copy()
    tk = 1.0
    best_K, best_g = K.copy(), margin_of(model, P, K)
    mu = 1e-2 * scale
    mu_min = 1e-9 * scale
    n_stage = max(1, int(np.ceil(np.log(mu / mu_min) / np.log(4.0))))
    per = max(50, iters // n_stage)
    it = 0
    for _ in range(n_stage + 1):
        step = mu / lip_base
        for _ in range(per):
            it += 1
            H = PB @ Y @ C
            S = G + H + H.T
            _, Q = _smooth_lmax(S, mu)
            grad = 2.0 * PB.T @ Q @ C.T
            Kn = project_mask_ball(Y - step * grad, mask, r)
            tn = 0.5 * (1 + np.sqrt(1 + 4 * tk * tk))
            Y = Kn + ((tk - 1) / tn) * (Kn - K)
            K, tk = Kn, tn
            g = margin_of(model, P, K)
            if g > best_g:
                best_g, best_K = g, K.copy()
        mu = max(mu / 4.0, mu_min)
        Y, tk = best_K.copy(), 1.0
        K = best_K.copy()
    return _finish(prob, P, best_K, "first_order", "converged", it, t0)


def max_gamma(prob: SynthesisProblem, method: str = "conic", P=None) -> SynthesisResult:
    """Maximize the margin ``gamma`` over gains on the mask within the norm bound.

    ``gamma`` is reported in the model's units (raw value times
    ``model.gamma_scale``).  The returned gamma is recomputed exactly from the
    returned ``K`` by an eigensolve, so ``S(K, gamma - tol)`` is negative
    definite for any ``tol > 0``.
    """
    if P is None:
        P = lyapunov_P(prob.model.A, prob.beta)
    if method == "conic":
        return _solve_conic(prob, P)
    if method == "first_order":
        return _solve_first_order(prob, P)
    raise ValueError(f"unknown method {method!r}")


# -- delay ----------------------------------------------------------------------------

def _power_norm(M, iters: int = 500, tol: float = 1e-14) -> float:
    """Spectral norm by power iteration on ``M^T M``."""
    M = np.asarray(M, float)
    if not M.any():
        return 0.0
    rng = np.random.default_rng(0)
    v = rng.standard_normal(M.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = M.T @ (M @ v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        if abs(nw - lam) <= tol * nw:
            lam = nw
            break
        lam = nw
    return float(np.sqrt(lam))


def alpha_bound(A, B, c_K: float, delay: float = 1.0, method: str = "svd") -> float:
    """Delay perturbation bound ``delay * c_K ||B|| (||A|| + ||B|| c_K)``."""
    if c_K <= 0:
        raise ValueError("c_K must be positive")
    nrm = (lambda M: float(np.linalg.norm(np.asarray(M, float), 2))) if method == "svd" \
        else _power_norm
    nA, nB = nrm(A), nrm(B)
    return float(delay * c_K * nB * (nA + nB * c_K))


def delay_block(model: StateSpaceModel, P, K, tau: float, alpha: float) -> np.ndarray:
    """``[[A_K^T P + P A_K + tau alpha^2 I, P], [P, -tau I]]``."""
    n = model.n
    top = lmi_matrix(model, P, K) + tau * alpha ** 2 * np.eye(n)
    return np.block([[top, P], [P, -tau * np.eye(n)]])


_DELAY_STORE: dict = {}


def _delay_program(model: StateSpaceModel, P, radius: float, alpha: float):
    import cvxpy as cp

    key = (model.A.tobytes(), model.B.tobytes(), P.tobytes(), radius, alpha)
    hit = _DELAY_STORE.get(key)
    if hit is not None:
        return hit
    n, m, p = model.n, model.m, model.p
    Kv = cp.Variable((m, p))
    Mp = cp.Parameter((m, p), nonneg=True)
    K = cp.multiply(Mp, Kv)
    tau = cp.Variable(nonneg=True)
    mu = cp.Variable()
    A, B, C = model.A, model.B, model.C
    H = (P @ B) @ K @ C
    top = _sym(A.T @ P + P @ A) + H + H.T + (tau * alpha ** 2) * np.eye(n) + mu * np.eye(n)
    blk = cp.bmat([[top, P], [P, (mu - tau) * np.eye(n)]])
    cons = [0.5 * (blk + blk.T) << 0, cp.sigma_max(K) <= radius]
    problem = cp.Problem(cp.Maximize(mu), cons)
    hit = (problem, Mp, K, tau)
    _DELAY_STORE[key] = hit
    return hit


def max_gamma_delay(prob: SynthesisProblem, P=None, D=None, strict: bool = False
                    ) -> SynthesisResult:
    """Robust margin under a norm-bounded delay perturbation.

    Maximizes ``mu`` such that ``delay_block(K, tau) + mu I <= 0`` for some
    ``tau > 0``.  The block is the S-procedure form of
    ``A_K^T P + P A_K + tau alpha^2 I + P^2 / tau < 0``.  ``mu > 0`` certifies
    the gain.  Otherwise the gain minimizing the block's top eigenvalue is
    still returned with ``extra["certified"] = False`` (or
    :class:`InfeasibleError` is raised when ``strict``); the spectrum of the
    delayed closed loop is reported either way and is the final judge.
    """
    import cvxpy as cp

    t0 = time.perf_counter()
    model = prob.model
    if P is None:
        P = lyapunov_P(model.A, prob.beta)
    alpha = prob.alpha
    if alpha is None:
        alpha = alpha_bound(model.A, model.B, prob.radius,
                            prob.delay if prob.delay is not None else 1.0)
    mask = np.asarray(prob.mask.allowed)
    problem, Mp, K, tau = _delay_program(model, P, prob.radius, alpha)
    Mp.value = mask.astype(float)
    try:
        problem.solve(solver=cp.CLARABEL, warm_start=False)
    except cp.error.SolverError as exc:
        raise SynthesisError(f"conic solver failed: {exc}") from exc
    if problem.status not in ("optimal", "optimal_inaccurate") or K.value is None:
        raise SynthesisError(f"conic solver status {problem.status}")
    Kval = np.where(mask, K.value, 0.0)
    s = np.linalg.norm(Kval, 2)
    if s > prob.radius:
        Kval *= prob.radius / s
    tval = float(tau.value)
    margin = float(-np.linalg.eigvalsh(_sym(delay_block(model, P, Kval, tval, alpha))).max())
    certified = margin > 0
    if strict and not certified:
        raise InfeasibleError(f"no delay-robust gain on this mask (best margin {margin:.3e})")
    if D is None:
        D = prob.delay if prob.delay is not None else 0.0
    _, spec = delay_closed_loop(model, Kval, D)
    rep = SolverReport("conic_delay", problem.status if certified else "infeasible",
                       int(problem.solver_stats.num_iters or 0), -margin,
                       time.perf_counter() - t0)
    g = margin_of(model, P, Kval)
    return SynthesisResult(Kval, g * model.gamma_scale, P, spec, rep, g,
                           {"alpha": alpha, "tau": tval, "delay_margin": margin,
                            "certified": certified})


# -- selection -------------------------------------------------------------------------

def select_best(candidates: Sequence[tuple[ConnectionSet, SynthesisResult]],
                rel_tol: float = 1e-6) -> tuple[ConnectionSet, SynthesisResult]:
    """Maximum gamma, then fewest total hops, then lexicographic paths."""
    if not candidates:
        raise ValueError("select_best needs at least one candidate")
    gmax = max(r.gamma for _, r in candidates)
    thr = gmax - rel_tol * max(abs(gmax), 1e-300)
    top = [c for c in candidates if c[1].gamma >= thr]
    return min(top, key=lambda c: (c[0].total_hops, c[0].paths))


@dataclass
class ZoneChoice:
    parameter: str
    gamma: float
    max_eig: float
    K: np.ndarray
    mask: SparsityMask
    meets_tolerance: bool
    table: list[tuple[str, float, float]]

    def to_json(self) -> dict:
        return {"parameter": self.parameter, "gamma": self.gamma, "max_eig": self.max_eig,
                "K": self.K.tolist(), "mask": self.mask.allowed.astype(int).tolist(),
                "meets_tolerance": self.meets_tolerance,
                "table": [list(r) for r in self.table]}


def _snap(x: float, tol: float) -> float:
    return float(np.round(x / tol) * tol) if tol > 0 else float(x)


def default_constraint_grid() -> list[ConstraintSet]:
    return [ConstraintSet(bwc=b, cc=c, cnc=n, prc=r)
            for b in range(1, 5) for c in range(4) for n in range(5) for r in range(5)]


def zone_design(zones: Sequence[StateSpaceModel], constraint_grid: Sequence[ConstraintSet],
                epsilons: Sequence[float], beta: float = 5000.0, rho: float = 5.0,
                norm_mode: NormMode = "spectral", evaluate=None, mask_filter=None,
                rank: Literal["gamma", "spectrum"] = "gamma",
                rtol: float = 1e-3) -> list[ZoneChoice]:
    """Choose the cheapest connection parameter per zone.

    Every configuration is expanded into its direct sensor-controller masks;
    each mask is synthesized once and a configuration is represented by its
    best mask.  "Best" means largest gamma (``rank="gamma"``) or most
    negative closed-loop eigenvalue (``rank="spectrum"``), the other quantity
    breaking ties.  The bandwidth whose best configuration has the most
    negative eigenvalue is kept; inside it, the configurations within
    ``rtol`` of that best merit and with eigenvalue at most ``-epsilon``
    compete on the digit sum of the parameter, then lexicographically.  When
    none meets ``-epsilon`` the bandwidth's best configuration is returned
    flagged.

    ``evaluate(model, mask) -> SynthesisResult`` may replace the default
    delay-free synthesis; ``mask_filter(mask) -> mask`` edits each mask first
    (used to knock out failed links).
    """
    if len(epsilons) != len(zones):
        raise ValueError("one tolerance per zone")
    if rank not in ("gamma", "spectrum"):
        raise ValueError(f"unknown rank {rank!r}")
    out = []
    for model, eps in zip(zones, epsilons):
        P = lyapunov_P(model.A, beta)
        # solver noise on exactly tied problems must not decide the choice
        G = lmi_matrix(model, P, np.zeros((model.m, model.p)))
        gtol = 1e-7 * np.abs(np.linalg.eigvalsh(G)).max() * model.gamma_scale
        etol = 1e-7 * max(1.0, np.abs(model.A).max())
        cache: dict[SparsityMask, tuple | None] = {}

        def score(mask):
            if mask not in cache:
                try:
                    if evaluate is not None:
                        res = evaluate(model, mask)
                    else:
                        res = max_gamma(SynthesisProblem(model, mask, beta, rho, norm_mode), P=P)
                    g, e = _snap(res.gamma, gtol), _snap(res.max_real, etol)
                    merit = (g, -e) if rank == "gamma" else (-e, g)
                    cache[mask] = (merit, g, e, res.K)
                except SynthesisError:
                    cache[mask] = None
            return cache[mask]

        rows = []
        for cs in constraint_grid:
            best = None
            for mask in cbscd(model.p, model.m, cs):
                if mask_filter is not None:
                    mask = mask_filter(mask)
                sc = score(mask)
                if sc is not None and (best is None or sc[0] > best[0]):
                    best = (*sc, mask)
            if best is not None:
                rows.append((cs, *best))
        if not rows:
            raise SynthesisError("no constraint configuration produced a mask")
        bw_best = {}
        for row in rows:
            b = row[0].bwc
            if b not in bw_best or row[1] > bw_best[b][1]:
                bw_best[b] = row
        chosen_bw = min(bw_best, key=lambda b: (bw_best[b][3], b))
        top = bw_best[chosen_bw][1][0]
        thr = top - max(rtol * abs(top), gtol if rank == "gamma" else etol)
        pool = [r for r in rows if r[0].bwc == chosen_bw and r[1][0] >= thr and r[3] <= -eps]
        meets = bool(pool)
        if not pool:
            pool = [bw_best[chosen_bw]]

        def digit_key(r):
            par = r[0].parameter
            return (sum(int(ch) for ch in par), par)

        cs, _, g, eig, K, mask = min(pool, key=digit_key)
        table = [(r[0].parameter, r[2], r[3]) for r in rows]
        out.append(ZoneChoice(cs.parameter, g, eig, K, mask, meets, table))
    return out
