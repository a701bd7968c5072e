"""Policies of the real-time interpolator and their closed-form consistency layer.

Every policy picks the next section's coefficients ``a = [e; alpha]`` by
minimising a convex quadratic ``a' A a + b' a`` subject to the continuity
head ``a[:phi+1] = e`` and the interval constraint ``|a' p(x_t) - y_t| <= eps``.
Eliminating the head leaves a weighted projection of an unconstrained optimum
``o`` onto a hyperslab, which has a closed form.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from math import factorial
from typing import ClassVar

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import autodiff as ad
from .core import NumericalError, RtiError, RtiState, SplineConfig, ValidationError
from .splinalg import NonPositiveSectionLength, basis_vector, curvature_matrix, powers


class NonPositiveGamma(ValidationError):
    pass


class MissingRnnOutput(RtiError, ValueError):
    pass


class SingularD(NumericalError):
    """The reduced Hessian was not positive definite (should not happen for ``u > 0``)."""


class DimensionMismatch(ValidationError):
    pass


# parameter sets ---------------------------------------------------------------


@dataclass(frozen=True)
class MyopicParams:
    kind: ClassVar[str] = "myopic"

    def arrays(self) -> dict:
        return {}

    @classmethod
    def from_arrays(cls, arrays: dict) -> "MyopicParams":
        return cls()


@dataclass(frozen=True)
class ParametrizedParams:
    """Mean ``mu``, log window decay and log Pareto weight of the cost-to-go."""

    kind: ClassVar[str] = "parametrized"
    mu: float = 0.0
    gamma_raw: float = 1.0
    lambda_raw: float = -3.0

    @property
    def gamma(self):
        return ad.exp(self.gamma_raw)

    @property
    def lam(self):
        return ad.exp(self.lambda_raw)

    def arrays(self) -> dict:
        return {f.name: np.asarray(getattr(self, f.name), dtype=float) for f in fields(self)}

    @classmethod
    def from_arrays(cls, arrays: dict) -> "ParametrizedParams":
        return cls(**{k: _scalar(v) for k, v in arrays.items()})


@dataclass(frozen=True)
class GruLayer:
    # gate blocks are stacked in (reset, update, candidate) order
    w_ih: np.ndarray
    w_hh: np.ndarray
    b_ih: np.ndarray
    b_hh: np.ndarray


@dataclass(frozen=True)
class RnnParams:
    kind: ClassVar[str] = "rnn"
    lambda_raw: float
    embed_w: np.ndarray
    embed_b: np.ndarray
    layers: tuple
    readout_w: np.ndarray
    readout_b: np.ndarray

    @property
    def lam(self):
        return ad.exp(self.lambda_raw)

    @property
    def hidden_size(self) -> int:
        return ad.value(self.layers[0].w_hh).shape[1]

    @property
    def input_size(self) -> int:
        return ad.value(self.embed_w).shape[0]

    def arrays(self) -> dict:
        out = {
            "lambda_raw": np.asarray(ad.value(self.lambda_raw), dtype=float),
            "embed_w": ad.value(self.embed_w),
            "embed_b": ad.value(self.embed_b),
        }
        for i, layer in enumerate(self.layers):
            for f in fields(layer):
                out[f"gru{i}_{f.name}"] = ad.value(getattr(layer, f.name))
        out["readout_w"] = ad.value(self.readout_w)
        out["readout_b"] = ad.value(self.readout_b)
        return out

    @classmethod
    def from_arrays(cls, arrays: dict) -> "RnnParams":
        n_layers = len({k.split("_")[0] for k in arrays if k.startswith("gru")})
        layers = tuple(
            GruLayer(*(arrays[f"gru{i}_{name}"] for name in ("w_ih", "w_hh", "b_ih", "b_hh")))
            for i in range(n_layers)
        )
        lam = arrays["lambda_raw"]
        return cls(
            lambda_raw=_scalar(lam) if not isinstance(lam, ad.Var) else lam,
            embed_w=arrays["embed_w"],
            embed_b=arrays["embed_b"],
            layers=layers,
            readout_w=arrays["readout_w"],
            readout_b=arrays["readout_b"],
        )


PARAM_TYPES = {cls.kind: cls for cls in (MyopicParams, ParametrizedParams, RnnParams)}


def _scalar(v):
    if isinstance(v, ad.Var):
        return v
    return float(np.asarray(v).reshape(()))


def rnn_input_dim(cfg: SplineConfig) -> int:
    return 3 + cfg.n_cont


def init_rnn(cfg: SplineConfig, rng: np.random.Generator, input_size: int = 32,
             hidden_size: int = 32, n_layers: int = 2, lambda_raw: float = -3.0) -> RnnParams:
    """Uniform(+-1/sqrt(hidden)) weights, zero biases."""
    bound = 1.0 / np.sqrt(hidden_size)

    def u(*shape):
        return rng.uniform(-bound, bound, size=shape)

    layers = []
    in_dim = input_size
    for _ in range(n_layers):
        layers.append(GruLayer(u(3 * hidden_size, in_dim), u(3 * hidden_size, hidden_size),
                               np.zeros(3 * hidden_size), np.zeros(3 * hidden_size)))
        in_dim = hidden_size
    return RnnParams(
        lambda_raw=float(lambda_raw),
        embed_w=u(input_size, rnn_input_dim(cfg)),
        embed_b=np.zeros(input_size),
        layers=tuple(layers),
        readout_w=u(cfg.n_free, hidden_size),
        readout_b=np.zeros(cfg.n_free),
    )


def zero_hidden(params: RnnParams, batch_shape=()) -> tuple:
    return tuple(np.zeros(tuple(batch_shape) + (params.hidden_size,)) for _ in params.layers)


# cost terms -------------------------------------------------------------------


def cost_to_go_matrices(u: float, gamma: float, mu: float, d: int):
    """Quadratic and linear terms of the exponentially windowed cost-to-go.

    Returns ``(R, v)`` such that the windowed squared deviation of the
    section's continuation from ``mu`` equals ``a' R a + a' v + mu^2``.
    """
    if not gamma > 0:
        raise NonPositiveGamma("gamma must be positive")
    if not u > 0:
        raise NonPositiveSectionLength("section length must be positive")
    n = d + 1
    gu = powers(gamma * u, 2 * d)
    # partial exponential sums S_s = sum_{k<=s} (gamma u)^k / k!
    partial = np.cumsum(gu / np.array([factorial(k) for k in range(2 * d + 1)], dtype=float))
    fact = np.array([factorial(k) for k in range(2 * d + 1)], dtype=float)
    g = fact * powers(1.0 / gamma, 2 * d) * partial
    idx = np.add.outer(np.arange(n), np.arange(n))
    R = g[idx]
    v = -2.0 * mu * g[:n]
    return R, v


def cost_to_go_tables(u, d: int):
    """Coefficient tables writing ``R`` and ``v`` as polynomials in ``1/gamma``.

    ``R = sum_j rho^j CR[..., j, :, :]`` and ``v = -2 mu sum_j rho^j CV[..., j, :]``
    with ``rho = 1/gamma``; ``[CR]_{j,i,k} = s!/(s-j)! u^(s-j)`` for
    ``s = i + k`` (0-based) and ``j <= s``. Used by the batched, differentiable
    path because every term is a monomial in ``rho``.
    """
    u = np.asarray(u, dtype=float)
    n = d + 1
    pu = powers(u, 2 * d)
    tab = np.zeros((2 * d + 1, 2 * d + 1))  # [s, j] -> s!/(s-j)! ; power s-j
    for s in range(2 * d + 1):
        for j in range(s + 1):
            tab[s, j] = factorial(s) // factorial(s - j)
    # G[..., j, s] = tab[s, j] * u^(s-j)
    G = np.zeros(u.shape + (2 * d + 1, 2 * d + 1))
    for s in range(2 * d + 1):
        for j in range(s + 1):
            G[..., j, s] = tab[s, j] * pu[..., s - j]
    idx = np.add.outer(np.arange(n), np.arange(n))
    CR = G[..., idx]
    CV = G[..., :n]
    return CR, CV


@dataclass(frozen=True)
class QuadraticCost:
    a_mat: np.ndarray
    b_vec: np.ndarray


@dataclass(frozen=True)
class SlabProblem:
    d_mat: np.ndarray
    o_vec: np.ndarray
    q_vec: np.ndarray
    z: float
    eps: float


def assemble_cost(state: RtiState, cfg: SplineConfig, params, n_t=None) -> QuadraticCost:
    m = curvature_matrix(state.u, cfg.d)
    kind = params.kind
    if kind == "myopic":
        return QuadraticCost(m, np.zeros(cfg.n_coeffs))
    if kind == "parametrized":
        lam = float(np.exp(params.lambda_raw))
        r, v = cost_to_go_matrices(state.u, float(np.exp(params.gamma_raw)), params.mu, cfg.d)
        return QuadraticCost(m + lam * r, lam * v)
    if kind == "rnn":
        if n_t is None:
            raise MissingRnnOutput("the RNN-based cost needs the network output n_t")
        n_t = np.asarray(n_t, dtype=float)
        if n_t.shape != (cfg.n_free,):
            raise DimensionMismatch(f"n_t must have {cfg.n_free} entries")
        lam = float(np.exp(params.lambda_raw))
        b = np.zeros(cfg.n_coeffs)
        b[cfg.n_cont:] = -2.0 * lam * n_t
        return QuadraticCost(m + lam * np.eye(cfg.n_coeffs), b)
    raise ValidationError(f"unknown policy kind {kind!r}")


def _chol(d_mat):
    try:
        return cho_factor(d_mat, lower=True)
    except LinAlgError as exc:
        raise SingularD("reduced Hessian is not positive definite") from exc


def reduce_to_slab(cost: QuadraticCost, e_t, p_xt, y: float, eps: float) -> SlabProblem:
    e_t = np.asarray(e_t, dtype=float)
    k = len(e_t)
    a = cost.a_mat
    d_mat = a[k:, k:]
    rhs = a[k:, :k] @ e_t + 0.5 * cost.b_vec[k:]
    o = -cho_solve(_chol(d_mat), rhs)
    return SlabProblem(d_mat, o, np.asarray(p_xt[k:], dtype=float), float(y - e_t @ p_xt[:k]), float(eps))


def hyperslab_project(p: SlabProblem) -> np.ndarray:
    """Projection of ``o`` onto ``{alpha : |alpha' q - z| <= eps}`` in the D-norm."""
    r = p.o_vec @ p.q_vec - p.z
    if abs(r) <= p.eps:
        return p.o_vec.copy()
    dq = cho_solve(_chol(p.d_mat), p.q_vec)
    shift = r - p.eps if r > p.eps else r + p.eps
    return p.o_vec - shift * dq / (p.q_vec @ dq)


# recurrent network ------------------------------------------------------------


def gru_cell(x, h, layer: GruLayer):
    """One GRU step; works on single vectors or batches, tracked or not."""
    hs = ad.value(layer.w_hh).shape[1]
    gx = ad.add(ad.matvec(layer.w_ih, x), layer.b_ih)
    gh = ad.add(ad.matvec(layer.w_hh, h), layer.b_hh)
    r = ad.sigmoid(ad.add(gx[..., :hs], gh[..., :hs]))
    z = ad.sigmoid(ad.add(gx[..., hs:2 * hs], gh[..., hs:2 * hs]))
    n = ad.tanh(ad.add(gx[..., 2 * hs:], ad.mul(r, gh[..., 2 * hs:])))
    # (1 - z) n + z h
    return ad.add(n, ad.mul(z, ad.sub(h, n)))


def gru_forward(w, hidden, params: RnnParams):
    """Embed ``w``, run the stacked GRU one step, read out ``n``.

    Returns ``(n, hidden')`` where ``hidden`` is a tuple with one state per layer.
    """
    if ad.value(w).shape[-1] != ad.value(params.embed_w).shape[1]:
        raise DimensionMismatch(f"input has {ad.value(w).shape[-1]} features, expected "
                                f"{ad.value(params.embed_w).shape[1]}")
    if len(hidden) != len(params.layers):
        raise DimensionMismatch("one hidden state per GRU layer is required")
    x = ad.add(ad.matvec(params.embed_w, w), params.embed_b)
    new_hidden = []
    for h, layer in zip(hidden, params.layers):
        if ad.value(h).shape[-1] != params.hidden_size:
            raise DimensionMismatch("hidden state size does not match the GRU")
        x = gru_cell(x, h, layer)
        new_hidden.append(x)
    n = ad.add(ad.matvec(params.readout_w, x), params.readout_b)
    return n, tuple(new_hidden)


def rnn_features(state: RtiState) -> np.ndarray:
    it = state.interval
    return np.concatenate([[state.u, it.y, it.eps], state.e])


# evaluation --------------------------------------------------------------------


def evaluate_policy(state: RtiState, cfg: SplineConfig, params, hidden=None):
    """Closed-form action of a policy at ``state``.

    Returns ``(coeffs, hidden')``; ``hidden'`` is None for stateless policies.
    """
    n_t = None
    new_hidden = None
    if params.kind == "rnn":
        if hidden is None:
            hidden = zero_hidden(params)
        n_t, new_hidden = gru_forward(rnn_features(state), hidden, params)
    cost = assemble_cost(state, cfg, params, n_t)
    p = basis_vector(state.interval.x, state.sigma.x_prev, cfg.d)
    slab = reduce_to_slab(cost, state.e, p, state.interval.y, state.interval.eps)
    alpha = hyperslab_project(slab)
    return np.concatenate([state.e, alpha]), new_hidden


# serialization -----------------------------------------------------------------


def params_to_dict(cfg: SplineConfig, params, **extra) -> dict:
    values = {}
    for name, arr in params.arrays().items():
        arr = np.asarray(arr, dtype=float)
        if arr.ndim == 0:
            values[name] = float(arr)
        else:
            values[name] = {"shape": list(arr.shape), "data": [float(v) for v in arr.ravel()]}
    doc = {"kind": params.kind, "d": cfg.d, "phi": cfg.phi, "values": values}
    doc.update(extra)
    return doc


def params_from_dict(doc: dict):
    """Inverse of :func:`params_to_dict`; returns ``(cfg, params, extra)``."""
    try:
        cls = PARAM_TYPES[doc["kind"]]
        cfg = SplineConfig(int(doc["d"]), int(doc["phi"]))
        raw = doc.get("values", {})
    except KeyError as exc:
        raise ValidationError(f"malformed policy document: missing {exc}") from exc
    arrays = {}
    for name, val in raw.items():
        if isinstance(val, dict):
            arrays[name] = np.array(val["data"], dtype=float).reshape(val["shape"])
        else:
            arrays[name] = np.asarray(float(val))
    params = cls.from_arrays(arrays)
    if params.kind == "rnn":
        if ad.value(params.readout_w).shape[0] != cfg.n_free:
            raise DimensionMismatch("readout size does not match d - phi")
        if ad.value(params.embed_w).shape[1] != rnn_input_dim(cfg):
            raise DimensionMismatch("embedding input does not match 3 + phi + 1")
    extra = {k: v for k, v in doc.items() if k not in ("kind", "d", "phi", "values")}
    return cfg, params, extra
