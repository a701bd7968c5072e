"""Dense convex QP solver and the batch minimum-curvature interpolation baseline.

The solver minimises ``x' H x + g' x`` subject to ``E x = f`` and
``G x <= h``. Equalities are removed with an orthonormal null-space basis.
The reduced inequality rows are scaled to unit norm and handed to a
primal-dual interior-point method; an active-set iteration started from the
rows it found tight then solves the KKT system exactly.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .core import NumericalError, RtiError, Spline, SplineConfig, ValidationError, as_sequence
from .rti import ReconstructionResult
from .splinalg import continuity_matrix, curvature_matrix, per_section_curvature, powers

log = logging.getLogger(__name__)


class Infeasible(RtiError, ValueError):
    pass


class MaxIterations(NumericalError):
    pass


@dataclass(frozen=True)
class DenseQp:
    H: np.ndarray
    g: np.ndarray
    E: np.ndarray | None = None
    f: np.ndarray | None = None
    G: np.ndarray | None = None
    h: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.g)
        if self.H.shape != (n, n):
            raise ValidationError("H must be n x n")
        if not np.allclose(self.H, self.H.T, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(self.H).max())):
            raise ValidationError("H must be symmetric")
        for mat, vec, label in ((self.E, self.f, "equality"), (self.G, self.h, "inequality")):
            if (mat is None) != (vec is None):
                raise ValidationError(f"{label} matrix and vector must be given together")
            if mat is not None and (mat.ndim != 2 or mat.shape[1] != n or mat.shape[0] != len(vec)):
                raise ValidationError(f"{label} constraints have inconsistent shapes")

    @property
    def n(self) -> int:
        return len(self.g)


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray
    iterations: int
    polished: bool

    def objective(self, p: DenseQp) -> float:
        return float(self.x @ p.H @ self.x + p.g @ self.x)


def kkt_residuals(p: DenseQp, sol: QpSolution) -> dict:
    x, nu, z = sol.x, sol.eq_multipliers, sol.ineq_multipliers
    grad = 2.0 * p.H @ x + p.g
    if p.E is not None:
        grad = grad + p.E.T @ nu
    res = {"stationarity": 0.0, "primal_eq": 0.0, "primal_ineq": 0.0, "dual": 0.0, "complementarity": 0.0}
    if p.G is not None:
        grad = grad + p.G.T @ z
        slack = p.h - p.G @ x
        res["primal_ineq"] = float(max(0.0, -slack.min())) if len(slack) else 0.0
        res["dual"] = float(max(0.0, -z.min())) if len(z) else 0.0
        res["complementarity"] = float(np.abs(z * slack).max()) if len(z) else 0.0
    if p.E is not None:
        res["primal_eq"] = float(np.abs(p.E @ x - p.f).max())
    res["stationarity"] = float(np.abs(grad).max())
    return res


def _null_space(E, f, n):
    if E is None or len(E) == 0:
        return np.zeros(n), np.eye(n)
    q, r = np.linalg.qr(E.T, mode="complete")
    diag = np.abs(np.diag(r)) if r.size else np.zeros(0)
    tol = max(E.shape) * np.finfo(float).eps * (diag.max() if len(diag) else 1.0)
    rank = int(np.sum(diag > tol))
    x_p, *_ = np.linalg.lstsq(E, f, rcond=None)
    if np.abs(E @ x_p - f).max() > 1e-9 * max(1.0, np.abs(f).max()):
        raise Infeasible("equality constraints are inconsistent")
    return x_p, q[:, rank:]


def _interior_point(P, c, A, b, tol, max_iter, sigma=0.1):
    """Primal-dual path following for min 0.5 w'Pw + c'w s.t. A w <= b."""
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _path_follow(P, c, A, b, tol, max_iter, sigma)


def _path_follow(P, c, A, b, tol, max_iter, sigma, centrality=1e-3):
    m, n = A.shape
    w = np.zeros(n)
    s = np.maximum(b - A @ w, 1.0)
    z = np.ones(m)
    scale_d = 1.0 + np.abs(c).max(initial=0.0)
    scale_p = 1.0 + np.abs(b).max(initial=0.0)
    best, best_merit, since_best = (w, z, s), math.inf, 0
    for it in range(1, max_iter + 1):
        r_d = P @ w + c + A.T @ z
        r_p = A @ w + s - b
        mu = float(s @ z) / m
        merit = max(np.abs(r_d).max() / scale_d, np.abs(r_p).max() / scale_p, mu / scale_d)
        if merit <= tol:
            return w, z, s, it, True
        if merit < best_merit:
            best, best_merit, since_best = (w, z, s), merit, 0
        else:
            since_best += 1
            if since_best >= 10:  # conditioning floor reached; hand over the best point
                return (*best, it, False)
        r_c = s * z - sigma * mu
        wgt = z / s
        lhs = P + A.T @ (wgt[:, None] * A)
        rhs = -r_d - A.T @ (wgt * r_p - r_c / s)
        try:
            dw = np.linalg.solve(lhs, rhs)
        except np.linalg.LinAlgError:
            dw = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
        ds = -r_p - A @ dw
        dz = -(r_c + z * ds) / s
        step = 1.0
        for v, dv in ((s, ds), (z, dz)):
            neg = dv < 0
            if np.any(neg):
                step = min(step, 0.99 * float(np.min(-v[neg] / dv[neg])))
        # stay in the wide neighbourhood s_i z_i >= centrality * mean(s z); without it the
        # gap can collapse while the dual residual is still large and the steps stall
        for _ in range(60):
            s_new, z_new = s + step * ds, z + step * dz
            if np.all(s_new * z_new >= centrality * float(s_new @ z_new) / m):
                break
            step *= 0.8
        w_new = w + step * dw
        if not (np.all(np.isfinite(w_new)) and np.all(s_new > 0) and np.all(z_new > 0)):
            return w, z, s, it, False  # stalled at roundoff level; the active-set stage takes over
        w, s, z = w_new, s_new, z_new
    return w, z, s, max_iter, False


def _kkt_solve(P, c, A, b, active):
    """Solve the equality-constrained subproblem with the rows in ``active`` held tight."""
    n, na = len(c), int(active.sum())
    Aa = A[active]
    kkt = np.zeros((n + na, n + na))
    kkt[:n, :n] = P
    kkt[:n, n:] = Aa.T
    kkt[n:, :n] = Aa
    rhs = np.concatenate([-c, b[active]])
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    w, z = sol[:n], sol[n:]
    # check each block on its own scale; P and the unit rows can differ by many decades
    station = P @ w + c + Aa.T @ z
    consistent = (np.abs(station).max(initial=0.0) <= 1e-8 * (1.0 + np.abs(c).max(initial=0.0)
                                                             + np.abs(P @ w).max(initial=0.0))
                  and np.abs(Aa @ w - b[active]).max(initial=0.0) <= 1e-9 * (1.0 + np.abs(b).max(initial=0.0)))
    return w, z, consistent


def _active_set(P, c, A, b, active, tol, max_steps=100):
    """Active-set iteration warm-started from the interior-point guess.

    Each step solves the KKT system of the working set, then drops the most
    negative multiplier or adds the most violated row. Returns ``None`` if it
    cycles or runs out of steps.
    """
    active = active.copy()
    feas_tol = tol * (1.0 + np.abs(b).max(initial=0.0))
    seen = set()
    for _ in range(max_steps):
        key = active.tobytes()
        if key in seen:
            return None
        seen.add(key)
        w, z_act, consistent = _kkt_solve(P, c, A, b, active)
        idx = np.flatnonzero(active)
        if not consistent:
            if not len(idx):
                return None
            active[idx[np.argmin(z_act)]] = False  # dependent rows with clashing bounds
            continue
        slack = b - A @ w
        if len(idx) and z_act.min() < -tol * (1.0 + np.abs(z_act).max()):
            active[idx[np.argmin(z_act)]] = False
        elif slack.min(initial=0.0) < -feas_tol:
            active[np.argmin(slack)] = True
        else:
            z = np.zeros(len(b))
            z[idx] = np.maximum(z_act, 0.0)
            return w, z
    return None


def qp_solve(p: DenseQp, tol: float = 1e-8, max_iter: int = 200) -> QpSolution:
    """Solve a dense convex QP; see the module docstring for the method."""
    n = p.n
    x_p, Z = _null_space(p.E, p.f, n)
    P = 2.0 * Z.T @ p.H @ Z
    c = Z.T @ (2.0 * p.H @ x_p + p.g)
    polished = False
    if p.G is None or len(p.G) == 0 or Z.shape[1] == 0:
        w = np.linalg.lstsq(P, -c, rcond=None)[0] if Z.shape[1] else np.zeros(0)
        z = np.zeros(0 if p.G is None else len(p.G))
        iters = 0
        if p.G is not None and np.any(p.G @ x_p - p.h > 1e-9 * (1.0 + np.abs(p.h).max(initial=0.0))):
            raise Infeasible("equality constraints leave no room for the inequalities")
    else:
        A = p.G @ Z
        b = p.h - p.G @ x_p
        # Jacobi-scale the variables, then equilibrate the rows: high powers of short
        # or long sections otherwise spread P and A over many decades
        diag = np.diag(P)
        col = np.where(diag > 0, 1.0 / np.sqrt(np.where(diag > 0, diag, 1.0)), 1.0)
        P, c, A = col[:, None] * P * col[None, :], col * c, A * col[None, :]
        norms = np.linalg.norm(A, axis=1)
        norms[norms == 0] = 1.0
        A, b = A / norms[:, None], b / norms
        w, z, s, iters, ok = _interior_point(P, c, A, b, tol, max_iter)
        refined = _active_set(P, c, A, b, z > s, tol)
        if refined is not None:
            w, z = refined
            polished = True
        elif not ok:
            raise MaxIterations(f"interior point did not converge in {max_iter} iterations")
        if np.any(A @ w - b > 1e-6 * (1.0 + np.abs(b).max())):
            raise Infeasible("no feasible point found")
        w = col * w
        z = z / norms
    x = x_p + Z @ w
    nu = np.zeros(0)
    if p.E is not None:
        grad = 2.0 * p.H @ x + p.g + (p.G.T @ z if p.G is not None else 0.0)
        nu = np.linalg.lstsq(p.E.T, -grad, rcond=None)[0]
    return QpSolution(x, nu, z, iters, polished)


def batch_interpolate(seq, cfg: SplineConfig = SplineConfig(3, 2), tol: float = 1e-10) -> ReconstructionResult:
    """Jointly optimal consistent spline: minimum total curvature over all sections.

    Unlike the online interpolator, the head of the first section is free.
    Zero-width intervals become equality constraints.
    """
    seq = as_sequence(seq)
    if len(seq) < 2:
        raise ValidationError("need at least two intervals")
    x, y, eps = seq.x, seq.y, seq.eps
    n, k = cfg.n_coeffs, cfg.n_cont
    T = len(x) - 1
    u = np.diff(x)
    nv = T * n
    H = np.zeros((nv, nv))
    ms = curvature_matrix(u, cfg.d)
    for t in range(T):
        H[t * n:(t + 1) * n, t * n:(t + 1) * n] = ms[t]
    cm = continuity_matrix(u, cfg)
    pw = powers(u, cfg.d)

    eq_rows, eq_rhs = [], []
    for t in range(T - 1):
        rows = np.zeros((k, nv))
        rows[:, t * n:(t + 1) * n] = -cm[t]
        rows[:, (t + 1) * n:(t + 1) * n + k] = np.eye(k)
        eq_rows.append(rows)
        eq_rhs.append(np.zeros(k))

    in_rows, in_rhs = [], []
    for j in range(T + 1):
        row = np.zeros(nv)
        if j == 0:
            row[0] = 1.0
        else:
            row[(j - 1) * n:j * n] = pw[j - 1]
        if eps[j] == 0:
            eq_rows.append(row[None])
            eq_rhs.append(np.array([y[j]]))
        else:
            in_rows += [row, -row]
            in_rhs += [y[j] + eps[j], -(y[j] - eps[j])]

    E = np.vstack(eq_rows) if eq_rows else None
    f = np.concatenate(eq_rhs) if eq_rhs else None
    G = np.array(in_rows) if in_rows else None
    h = np.array(in_rhs) if in_rhs else None
    sol = qp_solve(DenseQp(H, np.zeros(nv), E, f, G, h), tol=tol)
    a = sol.x.reshape(T, n)
    # re-impose continuity exactly so the result is a valid spline
    for t in range(1, T):
        a[t, :k] = cm[t - 1] @ a[t - 1]
    spline = Spline(cfg, x, tuple(a), a[0, :k])
    curv = per_section_curvature(spline)
    return ReconstructionResult(spline, float(np.mean(curv)), curv)


def step_qp(a_mat, b_vec, e_t, p_xt, y: float, eps: float) -> DenseQp:
    """One interpolation step as a generic QP over the full coefficient vector.

    Minimise ``a' A a + b' a`` with the head of ``a`` fixed to ``e_t`` and
    ``|a' p - y| <= eps``. Serves as an independent check of the closed form.
    """
    a_mat = np.asarray(a_mat, dtype=float)
    n, k = len(a_mat), len(e_t)
    E = np.eye(n)[:k]
    f = np.asarray(e_t, dtype=float)
    p = np.asarray(p_xt, dtype=float)
    if eps == 0:
        return DenseQp(a_mat, np.asarray(b_vec, dtype=float), np.vstack([E, p]), np.append(f, y))
    return DenseQp(a_mat, np.asarray(b_vec, dtype=float), E, f, np.vstack([p, -p]), np.array([y + eps, eps - y]))
