"""The real-time interpolator as a recurrent unit.

Two entry points share the same mathematics:

* :func:`stream_step` / :func:`reconstruct` process one sequence interval by
  interval, emitting each section as soon as its right knot arrives.
* :func:`unroll` runs a batch of equal-length sequences in lockstep with
  tracked autodiff values, for training by backpropagation through time.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .core import (Interval, IntervalSequence, NonMonotoneTimestamps, RtiState, SignalState,
                   Spline, SplineConfig, ValidationError, as_sequence)
from .policy import cost_to_go_tables, evaluate_policy, gru_forward, zero_hidden
from .splinalg import continuity_matrix, continuity_vector, curvature_matrix, per_section_curvature, powers


@dataclass(frozen=True)
class ReconstructionResult:
    spline: Spline
    loss: float
    per_section_curvature: np.ndarray


@dataclass(frozen=True)
class Carry:
    """Everything the unit remembers between two received intervals."""

    last: Interval
    e: np.ndarray
    hidden: tuple | None = None
    steps: int = 0


def default_e0(y0: float, cfg: SplineConfig) -> np.ndarray:
    e0 = np.zeros(cfg.n_cont)
    e0[0] = y0
    return e0


def initial_state(first: Interval, cfg: SplineConfig, e0=None) -> SignalState:
    """Signal state consumed when the second interval arrives."""
    e0 = default_e0(first.y, cfg) if e0 is None else np.asarray(e0, dtype=float)
    if e0.shape != (cfg.n_cont,):
        raise ValidationError(f"e0 must have {cfg.n_cont} entries")
    return SignalState(first.x, e0)


def state_update(prev: RtiState, prev_action, nxt: Interval, cfg: SplineConfig) -> RtiState:
    if not nxt.x > prev.interval.x:
        raise NonMonotoneTimestamps(1)
    e = continuity_vector(prev_action, prev.u, cfg)
    return RtiState(nxt, SignalState(prev.interval.x, e))


def stream_step(carry: Carry | None, interval: Interval, cfg: SplineConfig, params, e0=None):
    """Consume one interval; return ``(coeffs or None, carry')``.

    The first call (``carry=None``) only records the starting knot and
    returns no section.
    """
    if carry is None:
        sigma = initial_state(interval, cfg, e0)
        hidden = zero_hidden(params) if params.kind == "rnn" else None
        return None, Carry(interval, sigma.e, hidden, 0)
    state = RtiState(interval, SignalState(carry.last.x, carry.e))
    coeffs, hidden = evaluate_policy(state, cfg, params, carry.hidden)
    e_next = continuity_vector(coeffs, state.u, cfg)
    return coeffs, Carry(interval, e_next, hidden, carry.steps + 1)


def reconstruct(seq, cfg: SplineConfig, params, e0=None) -> ReconstructionResult:
    seq = as_sequence(seq)
    if len(seq) < 2:
        raise ValidationError("need at least two intervals to reconstruct a section")
    carry = None
    sections = []
    for it in seq:
        coeffs, carry = stream_step(carry, it, cfg, params, e0)
        if coeffs is not None:
            sections.append(coeffs)
    spline = Spline(cfg, seq.x, tuple(sections), sections[0][: cfg.n_cont])
    curv = per_section_curvature(spline)
    return ReconstructionResult(spline, float(np.mean(curv)), curv)


# batched, differentiable unroll ----------------------------------------------------


@dataclass(frozen=True)
class _Precomputed:
    m: np.ndarray      # (B, T, n, n)
    p: np.ndarray      # (B, T, n)
    c: np.ndarray      # (B, T, k, n)
    u: np.ndarray      # (B, T)
    cr22: np.ndarray | None = None
    cr21: np.ndarray | None = None
    cv2: np.ndarray | None = None


def _precompute(x, cfg: SplineConfig, kind: str) -> _Precomputed:
    u = np.diff(x, axis=1)
    if np.any(~(u > 0)):
        raise NonMonotoneTimestamps(int(np.argwhere(~(u > 0))[0, 1]) + 1)
    k = cfg.n_cont
    pre = dict(m=curvature_matrix(u, cfg.d), p=powers(u, cfg.d), c=continuity_matrix(u, cfg), u=u)
    if kind == "parametrized":
        cr, cv = cost_to_go_tables(u, cfg.d)
        pre.update(cr22=cr[..., k:, k:], cr21=cr[..., k:, :k], cv2=cv[..., k:])
    return _Precomputed(**pre)


def unroll(x, y, eps, cfg: SplineConfig, params, e0=None, return_coeffs: bool = False):
    """Reconstruct a batch of equal-length sequences in lockstep.

    ``x``, ``y``, ``eps`` have shape ``(B, N)``. ``params`` may hold
    :class:`~rtinterp.autodiff.Var` leaves, in which case the returned
    per-sequence losses (shape ``(B,)``, mean curvature per section) are
    tracked and can be differentiated with :func:`rtinterp.autodiff.backward`.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    B, N = x.shape
    if N < 2:
        raise ValidationError("need at least two intervals to reconstruct a section")
    kind = params.kind
    k = cfg.n_cont
    pre = _precompute(x, cfg, kind)

    if e0 is None:
        e = np.zeros((B, k))
        e[:, 0] = y[:, 0]
    else:
        e = np.broadcast_to(np.asarray(e0, dtype=float), (B, k)).copy()

    if kind == "parametrized":
        lam = ad.exp(params.lambda_raw)
        rho = ad.exp(ad.neg(params.gamma_raw))
        rho_pows = [1.0]
        for _ in range(2 * cfg.d):
            rho_pows.append(ad.mul(rho_pows[-1], rho))
        rho_vec = ad.stack(rho_pows, axis=0)
        lin_scale = ad.mul(ad.mul(lam, params.mu), -1.0)  # 0.5 * lambda * (-2 mu)
    elif kind == "rnn":
        lam = ad.exp(params.lambda_raw)
        hidden = zero_hidden(params, (B,))
        eye = np.eye(cfg.n_free)

    total = 0.0
    coeffs = []
    for t in range(N - 1):
        m = pre.m[:, t]
        m22 = m[:, k:, k:]
        m21 = m[:, k:, :k]
        if kind == "myopic":
            d_mat = m22
            rhs = ad.matvec(m21, e)
        elif kind == "parametrized":
            d_mat = ad.add(m22, ad.mul(lam, ad.einsum("j,bjik->bik", rho_vec, pre.cr22[:, t])))
            a21 = ad.add(m21, ad.mul(lam, ad.einsum("j,bjik->bik", rho_vec, pre.cr21[:, t])))
            lin = ad.mul(lin_scale, ad.einsum("j,bji->bi", rho_vec, pre.cv2[:, t]))
            rhs = ad.add(ad.matvec(a21, e), lin)
        elif kind == "rnn":
            w = ad.concat([pre.u[:, t, None], y[:, t + 1, None], eps[:, t + 1, None], e], axis=-1)
            n_t, hidden = gru_forward(w, hidden, params)
            d_mat = ad.add(m22, ad.mul(lam, eye))
            rhs = ad.sub(ad.matvec(m21, e), ad.mul(lam, n_t))
        else:
            raise ValidationError(f"unknown policy kind {kind!r}")

        p = pre.p[:, t]
        q = p[:, k:]
        z = ad.sub(y[:, t + 1], ad.dot(e, p[:, :k]))
        o = ad.neg(ad.solve_spd(d_mat, rhs))
        dq = ad.solve_spd(d_mat, q)
        r = ad.sub(ad.dot(o, q), z)
        rv, ev = ad.value(r), eps[:, t + 1]
        above, below = rv > ev, rv < -ev
        shift = ad.select(above, ad.sub(r, ev), ad.select(below, ad.add(r, ev), 0.0))
        step = ad.div(shift, ad.dot(q, dq))
        alpha = ad.sub(o, ad.mul(step[:, None], dq))
        a = ad.concat([e, alpha], axis=-1)
        total = ad.add(total, ad.dot(a, ad.matvec(m, a)))
        if return_coeffs:
            coeffs.append(ad.value(a))
        e = ad.matvec(pre.c[:, t], a)

    loss = ad.mul(total, 1.0 / (N - 1))
    if return_coeffs:
        return loss, np.stack(coeffs, axis=1)
    return loss
