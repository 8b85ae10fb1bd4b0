# qp/qp_solver.py
"""
Dense convex QP solver (primal active set)

    min  1/2 x^T Q x + p^T x
    s.t. G x <= h

Features:
 - feasible start from the warm start, the origin, or an LP phase 1 (scipy.optimize.linprog)
 - each iteration solves one KKT system of the working set directly
 - relative ridge for PSD (rank-deficient) Q, recorded on the solution
 - KKT certification with one iterative-refinement step before giving up
 - brute-force active-set enumeration oracle for tests and audits
"""

import enum
import itertools
import logging
import time
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import linprog

from errors import ConfigError

logger = logging.getLogger("QpSolver")

SYMMETRY_TOL = 1e-10
COMPLEMENTARITY_TOL = 1e-6


class QpStatus(str, enum.Enum):
    SOLVED = "Solved"
    MAX_ITERATIONS = "MaxIterations"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"


@dataclass(frozen=True)
class QpProblem:
    Q: np.ndarray
    p: np.ndarray
    G: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        p = np.asarray(self.p, dtype=float).reshape(-1)
        G = np.asarray(self.G, dtype=float)
        h = np.asarray(self.h, dtype=float).reshape(-1)
        dim = p.shape[0]
        if G.size == 0:
            G = np.zeros((0, dim))
        if Q.shape != (dim, dim) or G.shape != (h.shape[0], dim):
            raise ConfigError(f"inconsistent QP shapes: Q{Q.shape} p{p.shape} G{G.shape} h{h.shape}")
        for name, arr in (("Q", Q), ("p", p), ("G", G), ("h", h)):
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"QP data {name} contains non-finite values")
        if dim and np.max(np.abs(Q - Q.T)) >= SYMMETRY_TOL * max(1.0, float(np.max(np.abs(Q)))):
            raise ConfigError("QP matrix Q is not symmetric")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)

    @property
    def dim(self) -> int:
        return self.p.shape[0]

    @property
    def m(self) -> int:
        return self.h.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.Q @ x + self.p @ x)


@dataclass(frozen=True)
class QpSettings:
    eps_primal: float = 1e-8
    eps_dual: float = 1e-8
    max_iter: int = 10000
    regularization: float = 1e-10

    def __post_init__(self):
        if not (self.eps_primal > 0 and self.eps_dual > 0 and self.regularization >= 0):
            raise ConfigError("QP tolerances must be positive and regularization non-negative")
        if int(self.max_iter) < 1:
            raise ConfigError(f"QP max_iter must be >= 1, got {self.max_iter}")


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    status: QpStatus
    iterations: int
    primal_residual: float
    dual_residual: float
    duals: np.ndarray
    solve_time: float
    ridge: float = 0.0
    complementarity: float = 0.0
    # ||Qx + p + G^T lam||_inf without the ridge term
    unregularized_dual_residual: float = 0.0

    @property
    def solved(self) -> bool:
        return self.status is QpStatus.SOLVED


def relative_ridge(Q: np.ndarray, regularization: float) -> float:
    """Ridge regularization * max(1, max|Q_ij|) when Q is singular at that scale, else 0."""
    if Q.shape[0] == 0:
        return 0.0
    scale = max(1.0, float(np.max(np.abs(Q))))
    if np.linalg.eigvalsh(Q)[0] < 1e-12 * scale:
        return regularization * scale
    return 0.0


def kkt_residuals(prob: QpProblem, x: np.ndarray, duals: np.ndarray,
                  ridge: float = 0.0) -> Tuple[float, float, float]:
    """(max(Gx - h)+, ||(Q + ridge I)x + p + G^T lam||_inf, max_i |lam_i (Gx - h)_i|)"""
    x = np.asarray(x, dtype=float)
    lam = np.asarray(duals, dtype=float)
    slack = prob.G @ x - prob.h if prob.m else np.zeros(0)
    primal = float(max(0.0, slack.max())) if prob.m else 0.0
    grad = prob.Q @ x + ridge * x + prob.p + (prob.G.T @ lam if prob.m else 0.0)
    dual = float(np.max(np.abs(grad))) if prob.dim else 0.0
    comp = float(np.max(np.abs(lam * slack))) if prob.m else 0.0
    return primal, dual, comp


# ---------------------------------------------------------------------
# Active-set solver
# ---------------------------------------------------------------------
class ActiveSetQpSolver:
    """
    Primal active-set method. One instance keeps counters and must not be
    shared between threads during a solve.
    """

    def __init__(self, settings: Optional[QpSettings] = None, name: str = "qp"):
        self.settings = settings or QpSettings()
        self.name = name
        self.solves = 0
        self.failures = 0

    # ---------------- helpers ----------------
    def _ridge(self, Q: np.ndarray) -> float:
        return relative_ridge(Q, self.settings.regularization)

    def dual_tolerance(self, prob: QpProblem, x: np.ndarray) -> float:
        """eps_dual * max(1, |p|, |Q||x|): the bound a Solved result meets."""
        scale = 1.0
        if prob.dim:
            scale = max(1.0, float(np.max(np.abs(prob.p))),
                        float(np.max(np.abs(prob.Q))) * float(np.max(np.abs(x))))
        return self.settings.eps_dual * scale

    def _feasible_start(self, prob: QpProblem, warm_start: Optional[np.ndarray]) -> Optional[np.ndarray]:
        tol = self.settings.eps_primal
        if prob.m == 0:
            return np.zeros(prob.dim) if warm_start is None else np.array(warm_start, dtype=float)
        if warm_start is not None:
            x0 = np.array(warm_start, dtype=float).reshape(-1)
            if x0.shape == (prob.dim,) and np.all(np.isfinite(x0)) and np.max(prob.G @ x0 - prob.h) <= tol:
                return x0
        if np.min(prob.h) >= -tol:
            return np.zeros(prob.dim)

        # phase 1: min t  s.t.  G x - t <= h,  t >= -1
        c = np.zeros(prob.dim + 1)
        c[-1] = 1.0
        A_ub = np.hstack([prob.G, -np.ones((prob.m, 1))])
        bounds = [(None, None)] * prob.dim + [(-1.0, None)]
        res = linprog(c, A_ub=A_ub, b_ub=prob.h, bounds=bounds, method="highs")
        if res.status != 0 or res.x[-1] > tol:
            logger.debug("[QP:%s] phase 1 found no feasible point (status=%s)", self.name, res.status)
            return None
        return np.asarray(res.x[:prob.dim], dtype=float)

    def _initial_working_set(self, prob: QpProblem, x: np.ndarray) -> List[int]:
        if prob.m == 0:
            return []
        gap = prob.h - prob.G @ x
        tol = 1e-9 * max(1.0, float(np.max(np.abs(prob.h))))
        working: List[int] = []
        for i in np.flatnonzero(np.abs(gap) <= tol):
            if len(working) >= prob.dim:
                break
            candidate = working + [int(i)]
            if np.linalg.matrix_rank(prob.G[candidate]) == len(candidate):
                working = candidate
        return working

    @staticmethod
    def _solve_kkt(Qr: np.ndarray, rhs_top: np.ndarray, G_w: np.ndarray, h_w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        dim, k = Qr.shape[0], G_w.shape[0]
        K = np.zeros((dim + k, dim + k))
        K[:dim, :dim] = Qr
        K[:dim, dim:] = G_w.T
        K[dim:, :dim] = G_w
        rhs = np.concatenate([rhs_top, h_w])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        return sol[:dim], sol[dim:]

    # ---------------- main entry ----------------
    def solve(self, prob: QpProblem, warm_start: Optional[np.ndarray] = None) -> QpSolution:
        t0 = time.perf_counter()
        self.solves += 1
        settings = self.settings

        ridge = self._ridge(prob.Q)
        Qr = prob.Q + ridge * np.eye(prob.dim) if ridge else prob.Q

        x = self._feasible_start(prob, warm_start)
        if x is None:
            self.failures += 1
            return QpSolution(
                x=np.zeros(prob.dim), status=QpStatus.PRIMAL_INFEASIBLE, iterations=0,
                primal_residual=float("inf"), dual_residual=float("inf"), duals=np.zeros(prob.m),
                solve_time=time.perf_counter() - t0, ridge=ridge, unregularized_dual_residual=float("inf"),
            )

        working = self._initial_working_set(prob, x)
        lam_w = np.zeros(0)
        converged = False
        iterations = 0
        while iterations < settings.max_iter:
            iterations += 1
            G_w = prob.G[working]
            x_hat, lam_w = self._solve_kkt(Qr, -prob.p, G_w, prob.h[working])
            step = x_hat - x

            # ratio test over constraints outside the working set
            alpha, blocking = 1.0, None
            if prob.m:
                Gs = prob.G @ step
                thr = 1e-13 * max(1.0, float(np.max(np.abs(step))))
                outside = np.ones(prob.m, dtype=bool)
                outside[working] = False
                cand = np.flatnonzero(outside & (Gs > thr))
                if cand.size:
                    ratios = np.maximum(prob.h[cand] - prob.G[cand] @ x, 0.0) / Gs[cand]
                    k = int(np.argmin(ratios))
                    if ratios[k] < 1.0:
                        alpha, blocking = float(ratios[k]), int(cand[k])

            if blocking is not None:
                x = x + alpha * step
                working.append(blocking)
                continue

            x = x_hat
            # multipliers within roundoff of zero count as non-negative
            if not working or lam_w.min() >= -1e-3 * self.dual_tolerance(prob, x):
                converged = True
                break
            working.pop(int(np.argmin(lam_w)))

        duals = np.zeros(prob.m)
        if working and lam_w.shape[0] == len(working):
            duals[working] = np.maximum(lam_w, 0.0)

        status = QpStatus.MAX_ITERATIONS
        primal, dual, comp = kkt_residuals(prob, x, duals, ridge)
        if converged:
            if not self._certified(prob, x, duals, primal, dual, comp):
                # one step of iterative refinement on the working-set KKT system
                G_w = prob.G[working]
                r_top = -(Qr @ x + prob.p + G_w.T @ duals[working])
                r_bot = prob.h[working] - G_w @ x
                dx, dlam = self._solve_kkt(Qr, r_top, G_w, r_bot)
                x = x + dx
                if working:
                    duals[working] = np.maximum(duals[working] + dlam, 0.0)
                primal, dual, comp = kkt_residuals(prob, x, duals, ridge)
            if self._certified(prob, x, duals, primal, dual, comp):
                status = QpStatus.SOLVED
            else:
                logger.warning("[QP:%s] converged but KKT residuals not certified (primal=%.2e dual=%.2e comp=%.2e)",
                               self.name, primal, dual, comp)

        if status is not QpStatus.SOLVED:
            self.failures += 1
        raw_dual = kkt_residuals(prob, x, duals)[1] if ridge else dual
        return QpSolution(
            x=x, status=status, iterations=iterations, primal_residual=primal, dual_residual=dual,
            duals=duals, solve_time=time.perf_counter() - t0, ridge=ridge, complementarity=comp,
            unregularized_dual_residual=raw_dual,
        )

    def _certified(self, prob: QpProblem, x: np.ndarray, duals: np.ndarray,
                   primal: float, dual: float, comp: float) -> bool:
        # residuals are taken on the regularized problem
        return (primal <= self.settings.eps_primal
                and dual <= self.dual_tolerance(prob, x)
                and comp <= COMPLEMENTARITY_TOL)


def solve_qp(prob: QpProblem, settings: Optional[QpSettings] = None,
             warm_start: Optional[np.ndarray] = None) -> QpSolution:
    return ActiveSetQpSolver(settings).solve(prob, warm_start)


# ---------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------
def enumerate_active_sets(prob: QpProblem, feas_tol: float = 1e-9, regularization: float = 1e-10) -> Tuple[Optional[np.ndarray], float]:
    """
    Brute force: solve the equality-constrained QP for every linearly independent
    subset of rows and keep the feasible candidate with the lowest regularized
    objective (ties within roundoff go to the smaller |x|). Returns that x with its
    unregularized objective. Exponential in m; meant for m <= ~12.
    """
    ridge = relative_ridge(prob.Q, regularization)
    Q = prob.Q + ridge * np.eye(prob.dim) if ridge else prob.Q
    best_x, best_key = None, (float("inf"), float("inf"))
    for k in range(0, min(prob.m, prob.dim) + 1):
        for rows in itertools.combinations(range(prob.m), k):
            rows = list(rows)
            G_w = prob.G[rows]
            if k and np.linalg.matrix_rank(G_w) < k:
                continue
            x, _ = ActiveSetQpSolver._solve_kkt(Q, -prob.p, G_w, prob.h[rows])
            if prob.m and np.max(prob.G @ x - prob.h) > feas_tol:
                continue
            obj = float(0.5 * x @ Q @ x + prob.p @ x)
            norm = float(np.linalg.norm(x))
            best_obj, best_norm = best_key
            tie = 1e-12 * max(1.0, abs(obj))
            if obj < best_obj - tie or (obj <= best_obj + tie and norm < best_norm):
                best_x, best_key = x, (obj, norm)
    if best_x is None:
        return None, float("inf")
    return best_x, prob.objective(best_x)
