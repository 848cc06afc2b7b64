"""Solvers for the collocation system: weighted l2, reweighted l1, RS refit.

The constrained problem

    min ||K c||_1   subject to   ||W (A c + b)||_2 <= eps

is solved through its penalized form  min 1/2 ||W(Ac+b)||^2 + lam ||K c||_1
(accelerated proximal gradient / soft-thresholding, on column-normalized
data), with lam adjusted by bisection until the l2 residual lands within 1%
below eps.  The equivalence of the two forms is exact for this problem
class, and ending the bisection on the feasible side keeps every returned
iterate inside the constraint.

Reweighting follows the usual scheme: K = 1 / (|c_prev| + eta), iterated
until consecutive solutions differ by less than Delta_s.  An iterate is only
accepted if it does not increase the current surrogate ||K c||_1, so the
surrogate is non-increasing along accepted iterates by construction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import SolverError

Array = np.ndarray


@dataclass
class SolverConfig:
    """Knobs for the sparse step solver.

    epsilon is interpreted per ``epsilon_mode``: "relative" scales it by
    ||W b||_2 of the system being solved, "absolute" uses it as is.
    ``alpha_reserved`` is accepted for config compatibility but unused: it
    appears in the source algorithm's argument list without a defined role.
    """

    epsilon: float = 1e-6
    epsilon_mode: str = "relative"
    Delta_s: float = 1e-5
    eta_reg: float = 1e-4
    delta_rs: float = 1e-2
    max_reweight_iters: int = 20
    inner_tol: float = 1e-10
    inner_max_iters: int = 20000
    alpha_reserved: Optional[float] = None

    def __post_init__(self):
        if min(self.epsilon, self.Delta_s, self.eta_reg, self.delta_rs) <= 0:
            raise ValueError("all solver tolerances must be strictly positive")
        if self.max_reweight_iters < 1:
            raise ValueError("max_reweight_iters must be >= 1")
        if self.epsilon_mode not in ("relative", "absolute"):
            raise ValueError("epsilon_mode must be 'relative' or 'absolute'")

    def resolve_epsilon(self, weighted_b_norm: float) -> float:
        if self.epsilon_mode == "absolute":
            return self.epsilon
        return self.epsilon * max(weighted_b_norm, 1e-300)


@dataclass
class CoefficientState:
    """Result of one collocation solve."""

    c_l2: Array
    c_sparse: Array
    active_set: Array
    c_rs: Array
    diagnostics: dict = field(default_factory=dict)


def nnz(c: Array, threshold: float = 1e-5) -> int:
    return int(np.count_nonzero(np.abs(np.asarray(c)) > threshold))


def solve_weighted_l2(A: Array, b: Array, W: Array) -> Array:
    """Minimize ||W (A c + b)||_2; minimum-norm solution when rank deficient."""
    WA = W @ A
    c, _, rank, _ = np.linalg.lstsq(WA, -(W @ np.asarray(b, dtype=float)), rcond=None)
    return c


def _weighted_l2_full(A, b, W):
    WA = W @ A
    c, _, rank, _ = np.linalg.lstsq(WA, -(W @ np.asarray(b, dtype=float)), rcond=None)
    deficient = rank < min(A.shape)
    return c, rank, deficient


class _Fista:
    """min 1/2 ||M u + d||^2 + lam ||k u||_1 on column-normalized data."""

    def __init__(self, M: Array, tol: float, max_iters: int):
        self.M = M
        self.L = np.linalg.norm(M, 2) ** 2
        self.tol = tol
        self.max_iters = max_iters

    def solve(self, d: Array, lam_k: Array, u0: Array) -> Array:
        M, L = self.M, self.L
        if L == 0:
            return np.zeros_like(u0)
        step = 1.0 / L
        thresh = step * lam_k
        u = u0.copy()
        z = u.copy()
        t_acc = 1.0
        Mz = M @ z
        obj_prev = np.inf
        for it in range(self.max_iters):
            g = M.T @ (Mz + d)
            u_new = z - step * g
            u_new = np.sign(u_new) * np.maximum(np.abs(u_new) - thresh, 0.0)
            du = u_new - u
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_acc * t_acc))
            z = u_new + ((t_acc - 1.0) / t_new) * du
            Mz = M @ z
            # adaptive restart on objective increase
            if it % 10 == 0:
                r = M @ u_new + d
                obj = 0.5 * (r @ r) + lam_k @ np.abs(u_new)
                if obj > obj_prev * (1.0 + 1e-12):
                    z = u_new.copy()
                    Mz = M @ z
                    t_new = 1.0
                obj_prev = min(obj_prev, obj)
            scale = max(1.0, np.abs(u_new).max())
            u = u_new
            t_acc = t_new
            if np.abs(du).max() <= self.tol * scale:
                break
        return u


class SparseStepSolver:
    """Reusable solver for a fixed (A, W); b changes between calls.

    Column normalization and the Lipschitz constant are computed once.
    Warm starts carry the previous solution and penalty level across calls,
    which is what makes long time-stepping runs cheap.
    """

    def __init__(self, A: Array, W: Array, cfg: SolverConfig):
        self.A = np.asarray(A, dtype=float)
        self.W = np.asarray(W, dtype=float)
        self.cfg = cfg
        M = self.W @ self.A
        self.colnorm = np.linalg.norm(M, axis=0)
        self.colnorm[self.colnorm == 0] = 1.0
        self.Mn = M / self.colnorm
        self._fista = _Fista(self.Mn, cfg.inner_tol, cfg.inner_max_iters)
        self._warm_lam = None
        self._warm_u = None

    # -- constrained l1 ----------------------------------------------------

    def _residual(self, u: Array, d: Array) -> float:
        return float(np.linalg.norm(self.Mn @ u + d))

    def _constrained_l1(self, d: Array, K: Array, eps: float, u0: Array):
        """min ||K c||_1 s.t. ||W(Ac+b)||<=eps, in normalized variables u."""
        lam_k_unit = K / self.colnorm  # per-coordinate l1 weights on u
        norm_d = float(np.linalg.norm(d))
        if norm_d <= eps:
            return np.zeros_like(u0), 0.0
        lam_max = float(np.max(np.abs(self.Mn.T @ d) / np.maximum(lam_k_unit, 1e-300)))
        lam = self._warm_lam if self._warm_lam is not None else 0.1 * lam_max
        lam = min(max(lam, 1e-14 * lam_max), lam_max)

        u = u0.copy()
        evals = {}

        def solve_at(lam_try, u_start):
            u_sol = self._fista.solve(d, lam_try * lam_k_unit, u_start)
            r = self._residual(u_sol, d)
            evals[lam_try] = (u_sol, r)
            return u_sol, r

        u, r = solve_at(lam, u)
        lo, hi = None, None  # lo: feasible lam, hi: infeasible lam
        if r <= eps:
            lo = (lam, u, r)
        else:
            hi = (lam, u, r)
        # expand to bracket the eps crossing
        guard = 0
        while lo is None or hi is None:
            guard += 1
            if guard > 60:
                break
            if hi is None:
                lam = min(lam * 4.0, lam_max)
                u, r = solve_at(lam, lo[1])
                if r <= eps and lam >= lam_max:
                    lo = (lam, u, r)
                    break
                if r <= eps:
                    lo = (lam, u, r)
                else:
                    hi = (lam, u, r)
            else:
                lam = lam / 4.0
                u, r = solve_at(lam, hi[1])
                if r <= eps:
                    lo = (lam, u, r)
                else:
                    hi = (lam, u, r)
                if lam < 1e-16 * lam_max and lo is None:
                    # even tiny penalties stay infeasible: fall back to pure
                    # least squares direction via near-zero lam
                    u, r = solve_at(0.0, u)
                    lo = (0.0, u, r)
                    break
        if lo is None:
            raise SolverError(
                "inner l1 solver could not reach the feasibility region",
                last_iterate=hi[1] / np.maximum(self.colnorm, 1e-300),
                residual=hi[2],
            )
        # bisect toward r(lam) in [(1-1%) eps, eps]
        for _ in range(40):
            if hi is None or lo[2] >= 0.99 * eps:
                break
            if hi[0] / max(lo[0], 1e-300) < 1.0000001:
                break
            lam = np.sqrt(max(lo[0], 1e-18 * hi[0]) * hi[0])
            u, r = solve_at(lam, lo[1])
            if r <= eps:
                lo = (lam, u, r)
            else:
                hi = (lam, u, r)
        self._warm_lam = lo[0] if lo[0] > 0 else self._warm_lam
        self._warm_u = lo[1]
        return lo[1], lo[2]

    # -- public steps --------------------------------------------------------

    def solve_l2(self, b: Array):
        return _weighted_l2_full(self.A, b, self.W)

    def solve_reweighted_l1(self, b: Array, c_init: Optional[Array] = None):
        """Algorithm: K from |c_init|, iterate constrained l1 + reweight."""
        cfg = self.cfg
        b = np.asarray(b, dtype=float)
        d = self.W @ b
        eps = cfg.resolve_epsilon(float(np.linalg.norm(d)))

        if c_init is None:
            c_init, _, _ = self.solve_l2(b)
        r_l2 = float(np.linalg.norm(self.Mn @ (c_init * self.colnorm) + d))
        if eps < r_l2:
            eps = r_l2 * (1.0 + 1e-6)
            warnings.warn(
                f"epsilon below the least-squares residual; raised to {eps:.3e}"
            )

        K = 1.0 / (np.abs(c_init) + cfg.eta_reg)
        u = (
            self._warm_u.copy()
            if self._warm_u is not None and self._warm_u.size == self.A.shape[1]
            else c_init * self.colnorm
        )
        u, r = self._constrained_l1(d, K, eps, u)
        c_prev = u / self.colnorm
        iters = 1
        for _ in range(cfg.max_reweight_iters - 1):
            K = 1.0 / (np.abs(c_prev) + cfg.eta_reg)
            u_new, r_new = self._constrained_l1(d, K, eps, c_prev * self.colnorm)
            c_new = u_new / self.colnorm
            # accept only if the surrogate does not increase
            if K @ np.abs(c_new) > K @ np.abs(c_prev) * (1.0 + 1e-10):
                break
            delta = float(np.linalg.norm(c_new - c_prev))
            c_prev, r = c_new, r_new
            iters += 1
            if delta < cfg.Delta_s:
                break
        c_sparse = self._ensure_feasible(c_prev, b, eps, c_init)
        res = float(np.linalg.norm(self.W @ (self.A @ c_sparse + b)))
        return c_sparse, {"epsilon": eps, "residual": res, "reweight_iters": iters}

    def _ensure_feasible(self, c: Array, b: Array, eps: float, c_l2: Array) -> Array:
        """Blend toward the least-squares solution if solver slack leaked."""
        resid = float(np.linalg.norm(self.W @ (self.A @ c + b)))
        if resid <= eps * (1.0 + 1e-9):
            return c
        lo_t, hi_t = 0.0, 1.0  # t=1 -> c_l2 (feasible), t=0 -> c
        for _ in range(80):
            t = 0.5 * (lo_t + hi_t)
            cand = (1 - t) * c + t * c_l2
            r = float(np.linalg.norm(self.W @ (self.A @ cand + b)))
            if r <= eps:
                hi_t = t
            else:
                lo_t = t
            if hi_t - lo_t < 1e-12:
                break
        return (1 - hi_t) * c + hi_t * c_l2

    def reduce_and_refit(self, b: Array, c_sparse: Array, delta_rs: Optional[float] = None):
        delta = self.cfg.delta_rs if delta_rs is None else delta_rs
        active = np.flatnonzero(np.abs(c_sparse) > delta)
        c_rs = np.zeros_like(c_sparse)
        info = {"empty_active_set": False}
        if active.size == 0:
            info["empty_active_set"] = True
            return active, c_rs, info
        WA = self.W @ self.A[:, active]
        sol, _, _, _ = np.linalg.lstsq(WA, -(self.W @ b), rcond=None)
        c_rs[active] = sol
        info["rs_residual"] = float(np.linalg.norm(self.W @ (self.A @ c_rs + b)))
        return active, c_rs, info

    def solve_step(self, b: Array) -> CoefficientState:
        """l2 seed -> reweighted l1 -> RS reduction, with shared diagnostics."""
        c_l2, rank, deficient = self.solve_l2(b)
        c_sparse, info = self.solve_reweighted_l1(b, c_init=c_l2)
        active, c_rs, rs_info = self.reduce_and_refit(b, c_sparse)
        eps = info["epsilon"]
        rs_resid = rs_info.get("rs_residual", np.inf)
        if not rs_info["empty_active_set"] and rs_resid > 10.0 * eps:
            warnings.warn(
                f"RS refit residual {rs_resid:.3e} exceeds 10*epsilon; "
                "delta_rs may be too aggressive"
            )
        diagnostics = {
            "nnz_l2": nnz(c_l2),
            "nnz_sparse": nnz(c_sparse),
            "nnz_rs": nnz(c_rs),
            "rank_deficient": deficient,
            "rank": int(rank),
            **info,
            **rs_info,
        }
        return CoefficientState(
            c_l2=c_l2,
            c_sparse=c_sparse,
            active_set=active,
            c_rs=c_rs,
            diagnostics=diagnostics,
        )


# -- one-shot functional forms ------------------------------------------------

def solve_reweighted_l1(
    A: Array, b: Array, W: Array, cfg: SolverConfig, c_init: Optional[Array] = None
):
    """Standalone reweighted-l1 solve; returns (c_sparse, info)."""
    return SparseStepSolver(A, W, cfg).solve_reweighted_l1(b, c_init=c_init)


def reduce_and_refit(A: Array, b: Array, W: Array, c_sparse: Array, delta_rs: float):
    """Standalone RS reduction; returns (active_set, c_rs)."""
    solver = SparseStepSolver(A, W, SolverConfig(delta_rs=delta_rs))
    active, c_rs, _ = solver.reduce_and_refit(b, c_sparse, delta_rs)
    return active, c_rs
