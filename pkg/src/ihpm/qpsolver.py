"""Dense convex quadratic programming with equality and inequality duals.

Canonical form:

    minimize    0.5 * x' Q x + c' x
    subject to  A x  = b         (duals y)
                G x <= u         (duals z >= 0)

Stationarity convention: ``Q x + c + A' y + G' z = 0``. Relaxing the k-th
inequality by delta changes the optimum by about ``-z_k * delta``.

The solver is a Mehrotra-style predictor-corrector interior-point method on
dense factorizations; linear programs are the Q = 0 special case. Problem
sizes here are tens of variables, so dense linear algebra is the right tool.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.linalg

__all__ = [
    "DimensionMismatch",
    "KKTResiduals",
    "NumericalFailure",
    "QuadraticProgram",
    "SolverSolution",
    "kkt_report",
    "solve_lp",
    "solve_qp",
]

Status = Literal["optimal", "infeasible", "unbounded", "max_iterations"]

# Consecutive iterations without merit improvement before testing for
# infeasibility or unboundedness certificates.
DIVERGENCE_PATIENCE = 10


class DimensionMismatch(ValueError):
    """Structurally inconsistent problem data (shape mismatch)."""


class NumericalFailure(RuntimeError):
    """Factorization broke down; signals ill-conditioning, not infeasibility."""


def _as_matrix(M, rows: int | None, cols: int, name: str) -> np.ndarray:
    if M is None:
        return np.zeros((0 if rows is None else rows, cols))
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise DimensionMismatch(f"{name} must be a matrix, got ndim={M.ndim}")
    return M


def _as_vector(v, size: int | None, name: str) -> np.ndarray:
    if v is None:
        return np.zeros(0 if size is None else size)
    v = np.asarray(v, dtype=float).reshape(-1)
    return v


@dataclass(frozen=True)
class KKTResiduals:
    """Infinity norms of the three optimality residuals."""

    stationarity: float
    primal: float
    complementarity: float

    def worst(self) -> float:
        return max(self.stationarity, self.primal, self.complementarity)


@dataclass(frozen=True)
class QuadraticProgram:
    Q: np.ndarray
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    G: np.ndarray
    u: np.ndarray
    variable_names: tuple[str, ...] = ()
    equality_names: tuple[str, ...] = ()
    inequality_names: tuple[str, ...] = ()

    @classmethod
    def build(cls, c, Q=None, A=None, b=None, G=None, u=None,
              variable_names=(), equality_names=(), inequality_names=()) -> "QuadraticProgram":
        c = _as_vector(c, None, "c")
        n = c.size
        Q_ = np.zeros((n, n)) if Q is None else np.asarray(Q, dtype=float)
        return cls(
            Q=Q_,
            c=c,
            A=_as_matrix(A, None, n, "A"),
            b=_as_vector(b, None, "b"),
            G=_as_matrix(G, None, n, "G"),
            u=_as_vector(u, None, "u"),
            variable_names=tuple(variable_names),
            equality_names=tuple(equality_names),
            inequality_names=tuple(inequality_names),
        )

    @property
    def n(self) -> int:
        return self.c.size

    def validate(self) -> None:
        n = self.n
        if self.Q.shape != (n, n):
            raise DimensionMismatch(f"Q must be {n}x{n}, got {self.Q.shape}")
        if self.A.shape[1] != n or self.A.shape[0] != self.b.size:
            raise DimensionMismatch(
                f"equality system A{self.A.shape} / b({self.b.size}) inconsistent with n={n}"
            )
        if self.G.shape[1] != n or self.G.shape[0] != self.u.size:
            raise DimensionMismatch(
                f"inequality system G{self.G.shape} / u({self.u.size}) inconsistent with n={n}"
            )
        if self.variable_names and len(self.variable_names) != n:
            raise DimensionMismatch("variable_names length mismatch")
        if self.equality_names and len(self.equality_names) != self.A.shape[0]:
            raise DimensionMismatch("equality_names length mismatch")
        if self.inequality_names and len(self.inequality_names) != self.G.shape[0]:
            raise DimensionMismatch("inequality_names length mismatch")
        scale = max(1.0, float(np.abs(self.Q).max(initial=0.0)))
        if n and float(np.abs(self.Q - self.Q.T).max()) > 1e-12 * scale:
            raise ValueError("Q must be symmetric within 1e-12")
        if n:
            smallest = float(np.linalg.eigvalsh(0.5 * (self.Q + self.Q.T)).min())
            if smallest < -1e-9 * scale:
                raise ValueError(f"Q must be positive semidefinite, smallest eigenvalue {smallest:.3e}")

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.Q @ x + self.c @ x)

    def equality_dual_index(self, name: str) -> int:
        return self.equality_names.index(name)

    def inequality_dual_index(self, name: str) -> int:
        return self.inequality_names.index(name)


@dataclass(frozen=True)
class SolverSolution:
    status: Status
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    objective: float
    kkt: KKTResiduals
    iterations: int = 0


def _residuals(qp: QuadraticProgram, x: np.ndarray, y: np.ndarray, z: np.ndarray) -> KKTResiduals:
    stat = qp.Q @ x + qp.c + qp.A.T @ y + qp.G.T @ z
    primal = 0.0
    if qp.b.size:
        primal = float(np.abs(qp.A @ x - qp.b).max())
    comp = 0.0
    if qp.u.size:
        slack = qp.u - qp.G @ x
        primal = max(primal, float(np.maximum(-slack, 0.0).max()))
        comp = float(np.abs(z * slack).max())
    return KKTResiduals(
        stationarity=float(np.abs(stat).max(initial=0.0)),
        primal=primal,
        complementarity=comp,
    )


def kkt_report(qp: QuadraticProgram, sol: SolverSolution) -> KKTResiduals:
    """Recompute the three optimality residual norms from the primal/dual values."""
    return _residuals(qp, sol.x, sol.y, sol.z)


def _solve_without_inequalities(qp: QuadraticProgram, tol: float) -> SolverSolution:
    """Equality-constrained (or unconstrained) case: one KKT linear solve."""
    n, me = qp.n, qp.b.size
    K = np.zeros((n + me, n + me))
    K[:n, :n] = qp.Q
    if me:
        K[:n, n:] = qp.A.T
        K[n:, :n] = qp.A
    rhs = np.concatenate([-qp.c, qp.b])
    try:
        w = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        w, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    x, y = w[:n], w[n:]
    z = np.zeros(0)
    res = _residuals(qp, x, y, z)
    scale = max(1.0, float(np.abs(rhs).max(initial=0.0)))
    if res.worst() <= tol * scale:
        return SolverSolution("optimal", x, y, z, qp.objective(x), res, iterations=1)
    if me:
        xf, *_ = np.linalg.lstsq(qp.A, qp.b, rcond=None)
        if float(np.abs(qp.A @ xf - qp.b).max(initial=0.0)) > tol * scale:
            return SolverSolution("infeasible", x, y, z, qp.objective(x), res, iterations=1)
    # Feasible but stationarity unattainable: descent direction with no curvature.
    return SolverSolution("unbounded", x, y, z, qp.objective(x), res, iterations=1)


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    """Largest alpha with v + alpha*dv >= 0 for strictly positive v."""
    neg = dv < 0
    if not neg.any():
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


class _Newton:
    """Factorizes the reduced KKT matrix once per iteration, solves twice."""

    def __init__(self, qp: QuadraticProgram, s: np.ndarray, z: np.ndarray):
        self.qp = qp
        self.s = s
        self.z = z
        n, me = qp.n, qp.b.size
        H = qp.Q + qp.G.T @ ((z / s)[:, None] * qp.G)
        self.n, self.me = n, me
        self.M = np.zeros((n + me, n + me))
        self.M[:n, :n] = H
        if me:
            self.M[:n, n:] = qp.A.T
            self.M[n:, :n] = qp.A
        self.factor = None
        # Regularize at the problem's scale, not the barrier-inflated scale of
        # H, so late iterations are not biased by the diverging z/s weights.
        data_scale = max(
            1.0,
            float(np.abs(qp.Q).max(initial=0.0)),
            float(np.abs(qp.A).max(initial=0.0)),
            float(np.abs(qp.G).max(initial=0.0)),
        )
        lu_scale = max(1.0, float(np.abs(H).max(initial=0.0)))
        reg = 1e-13 * data_scale
        for _ in range(8):
            M = self.M.copy()
            M[:n, :n] += reg * np.eye(n)
            if me:
                M[n:, n:] -= reg * np.eye(me)
            try:
                with np.errstate(all="ignore"):
                    factor = scipy.linalg.lu_factor(M)
            except (scipy.linalg.LinAlgError, ValueError):
                reg *= 100.0
                continue
            diag = np.abs(np.diag(factor[0]))
            if np.isfinite(factor[0]).all() and float(diag.min()) > 1e-15 * lu_scale:
                self.factor = factor
                self.M_reg = M
                break
            reg *= 100.0
        if self.factor is None:
            raise NumericalFailure("KKT factorization failed even with regularization")

    def solve(self, rd: np.ndarray, rp: np.ndarray, rg: np.ndarray, rc: np.ndarray):
        qp, s, z = self.qp, self.s, self.z
        rhs_x = -rd - qp.G.T @ ((z * rg - rc) / s)
        rhs = np.concatenate([rhs_x, -rp])
        w = scipy.linalg.lu_solve(self.factor, rhs)
        # Refine against the unregularized matrix so the Newton step solves
        # the true system to near machine precision.
        for _ in range(2):
            w -= scipy.linalg.lu_solve(self.factor, self.M @ w - rhs)
        dx, dy = w[: self.n], w[self.n :]
        ds = -rg - qp.G @ dx
        dz = -(rc + z * ds) / s
        return dx, dy, dz, ds


def _farkas_infeasible(qp: QuadraticProgram, y: np.ndarray, z: np.ndarray) -> bool:
    scale = max(1.0, float(np.abs(y).max(initial=0.0)), float(np.abs(z).max(initial=0.0)))
    yn, zn = y / scale, z / scale
    if zn.size and float(zn.min()) < -1e-7:
        return False
    mat_scale = max(
        1.0,
        float(np.abs(qp.A).max(initial=0.0)),
        float(np.abs(qp.G).max(initial=0.0)),
    )
    combo = qp.A.T @ yn + qp.G.T @ zn
    if float(np.abs(combo).max(initial=0.0)) > 1e-6 * mat_scale:
        return False
    gain = float(qp.b @ yn) + float(qp.u @ zn)
    return gain < -1e-7


def _ray_unbounded(qp: QuadraticProgram, x: np.ndarray) -> bool:
    norm = float(np.abs(x).max(initial=0.0))
    if norm <= 1.0:
        return False
    d = x / norm
    if float(np.abs(qp.Q @ d).max(initial=0.0)) > 1e-6:
        return False
    if qp.b.size and float(np.abs(qp.A @ d).max()) > 1e-6:
        return False
    if qp.u.size and float((qp.G @ d).max()) > 1e-6:
        return False
    return float(qp.c @ d) < -1e-7


def _active_set_solution(qp: QuadraticProgram, active: np.ndarray) -> tuple | None:
    """Exact KKT solve treating ``active`` inequality rows as equalities."""
    n, me, ma = qp.n, qp.b.size, int(active.sum())
    Ga = qp.G[active]
    K = np.zeros((n + me + ma, n + me + ma))
    K[:n, :n] = qp.Q
    K[:n, n : n + me] = qp.A.T
    K[:n, n + me :] = Ga.T
    K[n : n + me, :n] = qp.A
    K[n + me :, :n] = Ga
    rhs = np.concatenate([-qp.c, qp.b, qp.u[active]])
    try:
        w, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    except np.linalg.LinAlgError:
        return None
    xp = w[:n]
    yp = w[n : n + me]
    zp = np.zeros(qp.u.size)
    zp[active] = w[n + me :]
    if zp.size and float(zp.min()) < -1e-9:
        return None
    if qp.u.size:
        slack = qp.u - qp.G @ xp
        if float(slack.min()) < -1e-9 * max(1.0, float(np.abs(qp.u).max())):
            return None
    return xp, yp, zp, _residuals(qp, xp, yp, zp)


def _polish(qp: QuadraticProgram, x, y, z, s) -> tuple | None:
    """Re-solve the KKT system on the apparent active set for crisp values.

    Accepted only when it stays close to the interior-point iterate (so
    degenerate central-path duals are not replaced by a different dual
    solution) and does not worsen the residuals.
    """
    cand = _active_set_solution(qp, z > s)
    if cand is None:
        return None
    xp, yp, zp, res = cand
    x_scale = 1.0 + float(np.abs(x).max(initial=0.0))
    z_scale = 1.0 + float(np.abs(z).max(initial=0.0))
    if float(np.abs(xp - x).max(initial=0.0)) > 1e-4 * x_scale:
        return None
    if float(np.abs(zp - z).max(initial=0.0)) > 1e-3 * z_scale:
        return None
    if res.worst() > _residuals(qp, x, y, z).worst():
        return None
    return cand


def _rescue_polish(qp: QuadraticProgram, x, y, z, s, tol: float) -> tuple | None:
    """Last-resort polish for stalled solves near a degenerate vertex.

    Complementarity pairs with both members small leave the active set
    ambiguous; enumerate the variants over the worst few pairs and accept any
    that satisfies the KKT conditions at ``tol``. Such a point is a certified
    optimum of the convex program, no matter how it was found.
    """
    base = z > s
    products = s * z
    ambiguous = [int(k) for k in np.argsort(-products) if products[k] > tol][:4]
    for bits in range(2 ** len(ambiguous)):
        active = base.copy()
        for bit, k in enumerate(ambiguous):
            active[k] = bool((bits >> bit) & 1)
        cand = _active_set_solution(qp, active)
        if cand is not None and cand[3].worst() <= tol:
            return cand
    return None


def _minimal_relaxation(qp: QuadraticProgram, tol: float) -> float | None:
    """Optimal uniform constraint relaxation t* >= 0; zero means feasible.

    Infeasibility oracle for iterates that diverge before a clean dual ray
    emerges: minimize t subject to G x - t <= u and |A x - b| <= t. The
    auxiliary program is always strictly feasible, so it solves cleanly.
    """
    n, me, mi = qp.n, qp.b.size, qp.u.size
    c = np.zeros(n + 1)
    c[n] = 1.0
    rows = []
    rhs = []
    if mi:
        rows.append(np.hstack([qp.G, -np.ones((mi, 1))]))
        rhs.append(qp.u)
    if me:
        rows.append(np.hstack([qp.A, -np.ones((me, 1))]))
        rhs.append(qp.b)
        rows.append(np.hstack([-qp.A, -np.ones((me, 1))]))
        rhs.append(-qp.b)
    tail = np.zeros((1, n + 1))
    tail[0, n] = -1.0
    rows.append(tail)
    rhs.append(np.zeros(1))
    aux = QuadraticProgram.build(c=c, G=np.vstack(rows), u=np.concatenate(rhs))
    sol = _solve_ipm(aux, max(tol, 1e-7), 100, classify=False)
    if sol.status != "optimal":
        return None
    return max(0.0, sol.objective)


def solve_qp(qp: QuadraticProgram, tol: float = 1e-8, max_iter: int = 100) -> SolverSolution:
    """Solve the QP, returning primal and dual values with a fresh KKT record."""
    qp.validate()
    if tol <= 0:
        raise ValueError("tol must be positive")
    if qp.u.size == 0:
        return _solve_without_inequalities(qp, tol)
    return _solve_ipm(qp, tol, max_iter, classify=True)


def _solve_ipm(qp: QuadraticProgram, tol: float, max_iter: int, classify: bool) -> SolverSolution:
    n, me, mi = qp.n, qp.b.size, qp.u.size

    if me:
        x, *_ = np.linalg.lstsq(qp.A, qp.b, rcond=None)
    else:
        x = np.zeros(n)
    y = np.zeros(me)
    s = np.maximum(1.0, np.abs(qp.u - qp.G @ x))
    z = np.full(mi, max(1.0, float(np.sqrt(np.abs(qp.c).max(initial=0.0)))))

    best_merit = np.inf
    stall = 0
    feasibility_checked = False
    status: Status = "max_iterations"
    iterations = 0

    for iterations in range(1, max_iter + 1):
        rd = qp.Q @ x + qp.c + qp.A.T @ y + qp.G.T @ z
        rp = qp.A @ x - qp.b
        rg = qp.G @ x + s - qp.u
        mu = float(s @ z) / mi

        res = _residuals(qp, x, y, z)
        if res.worst() <= tol:
            status = "optimal"
            break

        dual_norm = max(float(np.abs(y).max(initial=0.0)), float(np.abs(z).max()))
        merit = res.primal + res.stationarity + mu
        if merit < best_merit * (1.0 - 1e-6):
            best_merit = merit
            stall = 0
        else:
            stall += 1
        with np.errstate(all="ignore"):
            barrier_ratio = z / s
        blown = (
            dual_norm > 1e13
            or float(np.abs(x).max(initial=0.0)) > 1e13
            or not np.isfinite(barrier_ratio).all()
            or float(barrier_ratio.max()) > 1e16
        )
        if blown or stall >= DIVERGENCE_PATIENCE:
            diverged = res.worst() > 1e3 * tol
            if diverged and _farkas_infeasible(qp, y, z):
                status = "infeasible"
                break
            if diverged and _ray_unbounded(qp, x):
                status = "unbounded"
                break
            if res.worst() <= 1e-4:
                polished = _polish(qp, x, y, z, s)
                if polished is None or polished[3].worst() > tol:
                    polished = _rescue_polish(qp, x, y, z, s, tol)
                if polished is not None and polished[3].worst() <= tol:
                    x, y, z, res = polished
                    status = "optimal"
                    break
            if diverged and classify and not feasibility_checked:
                # The dual ray has not emerged cleanly; fall back to an
                # explicit feasibility solve to separate infeasible from slow.
                feasibility_checked = True
                rhs_scale = max(
                    1.0,
                    float(np.abs(qp.b).max(initial=0.0)),
                    float(np.abs(qp.u).max(initial=0.0)),
                )
                relaxation = _minimal_relaxation(qp, tol)
                if relaxation is not None and relaxation > 1e-6 * rhs_scale:
                    status = "infeasible"
                    break
            if blown:
                status = "max_iterations"
                break
            stall = 0  # no certificate; keep iterating

        newton = _Newton(qp, s, z)

        # Predictor (affine scaling) step.
        dx, dy, dz, ds = newton.solve(rd, rp, rg, s * z)
        alpha = min(_max_step(s, ds), _max_step(z, dz))
        alpha_aff = min(1.0, alpha)
        mu_aff = float((s + alpha_aff * ds) @ (z + alpha_aff * dz)) / mi
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

        # Corrector with centering.
        rc = s * z + ds * dz - sigma * mu
        dx, dy, dz, ds = newton.solve(rd, rp, rg, rc)
        alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(z, dz)))

        # Endgame guard: near convergence the Newton solve can lose accuracy
        # on hard-active rows; backtrack rather than let residuals regress.
        if res.worst() <= 1e-3:
            for _ in range(8):
                trial = _residuals(qp, x + alpha * dx, y + alpha * dy, z + alpha * dz)
                if trial.worst() <= max(1.5 * res.worst(), tol):
                    break
                alpha *= 0.5

        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        z = z + alpha * dz

    else:
        iterations = max_iter

    if status == "optimal":
        polished = _polish(qp, x, y, z, s)
        if polished is not None:
            x, y, z, res = polished
    elif status == "max_iterations" and _residuals(qp, x, y, z).worst() <= 1e-4:
        rescued = _rescue_polish(qp, x, y, z, s, tol)
        if rescued is not None:
            x, y, z, res = rescued
            status = "optimal"
    res = _residuals(qp, x, y, z)
    return SolverSolution(status, x, y, z, qp.objective(x), res, iterations)


def solve_lp(c, A=None, b=None, G=None, u=None, tol: float = 1e-8, max_iter: int = 100,
             variable_names=(), equality_names=(), inequality_names=()) -> SolverSolution:
    """Linear program: solve_qp with zero curvature."""
    qp = QuadraticProgram.build(
        c=c, A=A, b=b, G=G, u=u,
        variable_names=variable_names,
        equality_names=equality_names,
        inequality_names=inequality_names,
    )
    return solve_qp(qp, tol=tol, max_iter=max_iter)
