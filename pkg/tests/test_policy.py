import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from rtinterp import autodiff as ad
from rtinterp.batchref import qp_solve, step_qp
from rtinterp.core import Interval, RtiState, SignalState, SplineConfig
from rtinterp.policy import (DimensionMismatch, GruLayer, MissingRnnOutput, MyopicParams, NonPositiveGamma,
                             ParametrizedParams, RnnParams, SlabProblem, assemble_cost, cost_to_go_matrices,
                             cost_to_go_tables, evaluate_policy, gru_forward, hyperslab_project, init_rnn,
                             params_from_dict, params_to_dict, reduce_to_slab, zero_hidden)
from rtinterp.splinalg import basis_vector, curvature_matrix

from conftest import random_params


def _state(x_prev, x, y, eps, e):
    return RtiState(Interval(x, y, eps), SignalState(x_prev, np.asarray(e, dtype=float)))


# cost-to-go ---------------------------------------------------------------------


def test_cost_to_go_examples():
    for u, g in [(0.3, 0.5), (1.0, 1.0), (4.0, 2.5)]:
        R, v = cost_to_go_matrices(u, g, 0.7, 3)
        assert R[0, 0] == pytest.approx(1.0)
        assert v[0] == pytest.approx(-1.4)
    R, _ = cost_to_go_matrices(1.0, 1.0, 0.0, 3)
    assert R[0, 1] == pytest.approx(2.0)
    _, v = cost_to_go_matrices(2.0, 0.8, 0.0, 4)
    np.testing.assert_array_equal(v, 0)


@pytest.mark.parametrize("u,gamma", [(0.5, 0.7), (1.0, 1.0), (2.0, 3.0)])
def test_cost_to_go_against_quadrature(u, gamma):
    d, mu = 4, 0.3
    R, v = cost_to_go_matrices(u, gamma, mu, d)
    for i in range(d + 1):
        for j in range(d + 1):
            val, _ = quad(lambda t: t ** (i + j) * math.exp(-gamma * (t - u)), u, np.inf, epsabs=0, epsrel=1e-13)
            assert R[i, j] == pytest.approx(gamma * val, rel=1e-9)
        val, _ = quad(lambda t: t ** i * math.exp(-gamma * (t - u)), u, np.inf, epsabs=0, epsrel=1e-13)
        assert v[i] == pytest.approx(-2 * mu * gamma * val, rel=1e-9)


def test_cost_to_go_tables_reassemble():
    rng = np.random.default_rng(3)
    for d in (2, 3, 5):
        u, gamma, mu = rng.uniform(0.1, 3), rng.uniform(0.2, 4), rng.normal()
        CR, CV = cost_to_go_tables(u, d)
        rho = (1 / gamma) ** np.arange(2 * d + 1)
        R, v = cost_to_go_matrices(u, gamma, mu, d)
        np.testing.assert_allclose(np.einsum("j,jik->ik", rho, CR), R, rtol=1e-12)
        np.testing.assert_allclose(-2 * mu * rho @ CV, v, rtol=1e-12)


def test_cost_to_go_rejects_bad_gamma():
    with pytest.raises(NonPositiveGamma):
        cost_to_go_matrices(1.0, 0.0, 0.0, 3)


@settings(max_examples=300, deadline=None)
@given(u=st.floats(0.05, 10), gamma=st.floats(0.05, 10), lam=st.floats(1e-4, 100), d=st.integers(2, 6))
def test_parametrized_cost_is_convex(u, gamma, lam, d):
    R, _ = cost_to_go_matrices(u, gamma, 0.0, d)
    a = curvature_matrix(u, d) + lam * R
    scale = np.abs(a).max()
    assert np.linalg.eigvalsh(R / np.abs(R).max()).min() >= -1e-10
    assert np.linalg.eigvalsh(a / scale).min() >= -1e-10


@settings(max_examples=300, deadline=None)
@given(u=st.floats(0.01, 50), d=st.integers(2, 8), data=st.data())
def test_reduced_curvature_is_positive_definite(u, d, data):
    phi = data.draw(st.integers(1, d - 1))
    m = curvature_matrix(u, d)[phi + 1:, phi + 1:]
    np.linalg.cholesky(m)


# assembled costs -----------------------------------------------------------------


def test_assemble_cost_rows():
    cfg = SplineConfig(3, 1)
    st_ = _state(0.0, 1.0, 0.0, 0.1, [0.0, 0.0])
    c = assemble_cost(st_, cfg, MyopicParams())
    np.testing.assert_allclose(c.a_mat, curvature_matrix(1.0, 3))
    np.testing.assert_array_equal(c.b_vec, 0)
    bypass = assemble_cost(st_, cfg, ParametrizedParams(0.5, 0.2, -math.inf))
    np.testing.assert_array_equal(bypass.a_mat, c.a_mat)
    np.testing.assert_array_equal(bypass.b_vec, c.b_vec)
    rnn = init_rnn(cfg, np.random.default_rng(0), lambda_raw=0.0)
    c = assemble_cost(st_, cfg, rnn, n_t=[2.0, 3.0])
    np.testing.assert_allclose(c.b_vec, [0, 0, -4, -6])
    np.testing.assert_allclose(c.a_mat, curvature_matrix(1.0, 3) + np.eye(4))
    with pytest.raises(MissingRnnOutput):
        assemble_cost(st_, cfg, rnn)


def test_reduce_to_slab_zero_head_gives_zero_target():
    cfg = SplineConfig(4, 2)
    st_ = _state(0.0, 1.3, 0.4, 0.1, np.zeros(3))
    cost = assemble_cost(st_, cfg, MyopicParams())
    slab = reduce_to_slab(cost, st_.e, basis_vector(1.3, 0.0, 4), 0.4, 0.1)
    np.testing.assert_array_equal(slab.o_vec, 0)


def test_reduce_to_slab_matches_equality_qp():
    rng = np.random.default_rng(11)
    cfg = SplineConfig(3, 1)
    for kind in ("myopic", "parametrized", "rnn"):
        params = random_params(kind, cfg, rng)
        for _ in range(20):
            u = rng.uniform(0.2, 3)
            st_ = _state(0.0, u, 0.0, 1e6, rng.normal(size=2))
            n_t = rng.normal(size=2) if kind == "rnn" else None
            cost = assemble_cost(st_, cfg, params, n_t)
            p = basis_vector(u, 0.0, 3)
            slab = reduce_to_slab(cost, st_.e, p, 0.0, 1e6)
            sol = qp_solve(step_qp(cost.a_mat, cost.b_vec, st_.e, p, 0.0, 1e6), tol=1e-12)
            np.testing.assert_allclose(slab.o_vec, sol.x[2:], rtol=1e-9, atol=1e-9)
            np.testing.assert_array_equal(slab.d_mat, cost.a_mat[2:, 2:])


# projection ---------------------------------------------------------------------


def test_hyperslab_scalar_example():
    p = SlabProblem(np.eye(1), np.array([2.0]), np.array([1.0]), 0.0, 0.5)
    np.testing.assert_allclose(hyperslab_project(p), [0.5])
    inner = SlabProblem(np.eye(1), np.array([0.3]), np.array([1.0]), 0.0, 0.5)
    np.testing.assert_array_equal(hyperslab_project(inner), [0.3])


def _random_slab(rng, m, eps=None):
    a = rng.normal(size=(m, m))
    return SlabProblem(a @ a.T + 0.1 * np.eye(m), rng.normal(scale=2, size=m), rng.normal(size=m),
                       float(rng.normal()), float(rng.uniform(0, 0.5) if eps is None else eps))


def test_hyperslab_matches_qp_and_is_idempotent():
    rng = np.random.default_rng(7)
    for i in range(300):
        m = int(rng.integers(1, 5))
        p = _random_slab(rng, m, eps=0.0 if i % 10 == 0 else None)
        alpha = hyperslab_project(p)
        assert abs(alpha @ p.q_vec - p.z) <= p.eps + 1e-12
        # min (x - o)' D (x - o)  ->  H = D, g = -2 D o
        if p.eps == 0:
            qp = step_qp(p.d_mat, -2 * p.d_mat @ p.o_vec, [], p.q_vec, p.z, 0.0)
        else:
            qp = step_qp(p.d_mat, -2 * p.d_mat @ p.o_vec, [], p.q_vec, p.z, p.eps)
        x = qp_solve(qp, tol=1e-12).x
        np.testing.assert_allclose(alpha, x, rtol=1e-8, atol=1e-8)
        again = hyperslab_project(SlabProblem(p.d_mat, alpha, p.q_vec, p.z, p.eps))
        np.testing.assert_allclose(again, alpha, rtol=0, atol=1e-12)


# policy evaluation ----------------------------------------------------------------


def test_myopic_lands_on_lower_hyperplane():
    cfg = SplineConfig(3, 1)
    a, _ = evaluate_policy(_state(0.0, 1.0, 1.0, 0.1, [0.0, 0.0]), cfg, MyopicParams())
    assert a[2:] @ basis_vector(1.0, 0.0, 3)[2:] == pytest.approx(0.9, abs=1e-12)
    np.testing.assert_array_equal(a[:2], [0.0, 0.0])


@pytest.mark.parametrize("kind", ["myopic", "parametrized", "rnn"])
def test_evaluate_policy_feasible_and_matches_qp(kind):
    rng = np.random.default_rng(hash(kind) % 1000)
    for _ in range(60):
        d = int(rng.integers(2, 7))
        cfg = SplineConfig(d, int(rng.integers(1, d)))
        params = random_params(kind, cfg, rng)
        u = rng.uniform(0.1, 3)
        st_ = _state(1.0, 1.0 + u, rng.normal(), rng.uniform(0, 0.4), rng.normal(size=cfg.n_cont))
        a, hidden = evaluate_policy(st_, cfg, params)
        p = basis_vector(st_.interval.x, 1.0, d)
        assert abs(a @ p - st_.interval.y) <= st_.interval.eps + 1e-9 * max(1.0, abs(st_.interval.y))
        np.testing.assert_array_equal(a[: cfg.n_cont], st_.e)
        n_t = gru_forward(np.concatenate([[u, st_.interval.y, st_.interval.eps], st_.e]),
                          zero_hidden(params), params)[0] if kind == "rnn" else None
        cost = assemble_cost(st_, cfg, params, n_t)
        sol = qp_solve(step_qp(cost.a_mat, cost.b_vec, st_.e, p, st_.interval.y, st_.interval.eps), tol=1e-12)
        np.testing.assert_allclose(a, sol.x, rtol=0, atol=1e-7 * max(1.0, np.abs(a).max()))
        assert (hidden is None) == (kind != "rnn")


def test_zero_weight_bypass_matches_myopic_exactly():
    rng = np.random.default_rng(2)
    cfg = SplineConfig(4, 1)
    rnn = init_rnn(cfg, rng, lambda_raw=-math.inf)
    par = ParametrizedParams(0.7, 0.3, -math.inf)
    for _ in range(50):
        st_ = _state(0.0, rng.uniform(0.1, 2), rng.normal(), rng.uniform(0, 0.3), rng.normal(size=2))
        ref, _ = evaluate_policy(st_, cfg, MyopicParams())
        np.testing.assert_array_equal(evaluate_policy(st_, cfg, par)[0], ref)
        np.testing.assert_array_equal(evaluate_policy(st_, cfg, rnn)[0], ref)


# GRU -----------------------------------------------------------------------------


def _sigmoid(v):
    return 1 / (1 + math.exp(-v))


def _reference_gru_layer(x, h, layer):
    """Scalar-loop GRU step with (reset, update, candidate) gate blocks."""
    H = len(h)
    out = np.empty(H)
    gi = [sum(layer.w_ih[r, c] * x[c] for c in range(len(x))) + layer.b_ih[r] for r in range(3 * H)]
    gh = [sum(layer.w_hh[r, c] * h[c] for c in range(H)) + layer.b_hh[r] for r in range(3 * H)]
    for j in range(H):
        r = _sigmoid(gi[j] + gh[j])
        z = _sigmoid(gi[H + j] + gh[H + j])
        n = math.tanh(gi[2 * H + j] + r * gh[2 * H + j])
        out[j] = (1 - z) * n + z * h[j]
    return out


def test_gru_zero_weights():
    cfg = SplineConfig(3, 1)
    p = init_rnn(cfg, np.random.default_rng(0), input_size=4, hidden_size=3)
    zero = RnnParams(0.0, np.zeros_like(p.embed_w), np.zeros(4),
                     tuple(GruLayer(*(np.zeros_like(a) for a in (l.w_ih, l.w_hh, l.b_ih, l.b_hh))) for l in p.layers),
                     np.zeros_like(p.readout_w), np.array([0.25, -1.5]))
    n, hidden = gru_forward(np.ones(5), zero_hidden(zero), zero)
    np.testing.assert_array_equal(n, [0.25, -1.5])
    for h in hidden:
        np.testing.assert_array_equal(h, 0)


def test_gru_hand_computed_unit():
    layer = GruLayer(np.array([[0.5], [-1.0], [2.0]]), np.array([[1.0], [0.5], [-0.5]]),
                     np.array([0.1, 0.2, 0.3]), np.array([0.0, -0.1, 0.2]))
    params = RnnParams(0.0, np.eye(1), np.zeros(1), (layer,), np.eye(1), np.zeros(1))
    x, h = 0.8, 0.4
    r = _sigmoid(0.5 * x + 0.1 + 1.0 * h + 0.0)
    z = _sigmoid(-1.0 * x + 0.2 + 0.5 * h - 0.1)
    cand = math.tanh(2.0 * x + 0.3 + r * (-0.5 * h + 0.2))
    expected = (1 - z) * cand + z * h
    n, _ = gru_forward(np.array([x]), (np.array([h]),), params)
    assert n[0] == pytest.approx(expected, abs=1e-15)


def test_gru_matches_reference_implementation():
    rng = np.random.default_rng(9)
    cfg = SplineConfig(4, 2)
    p = init_rnn(cfg, rng, input_size=6, hidden_size=5, n_layers=3)
    p = RnnParams(0.0, p.embed_w, rng.normal(size=6),
                  tuple(GruLayer(l.w_ih, l.w_hh, rng.normal(size=15), rng.normal(size=15)) for l in p.layers),
                  p.readout_w, rng.normal(size=2))
    hidden = tuple(rng.normal(size=5) for _ in range(3))
    w = rng.normal(size=6)
    n, new_hidden = gru_forward(w, hidden, p)
    x = p.embed_w @ w + p.embed_b
    for h, layer, got in zip(hidden, p.layers, new_hidden):
        x = _reference_gru_layer(x, h, layer)
        np.testing.assert_allclose(got, x, rtol=0, atol=1e-12)
    np.testing.assert_allclose(n, p.readout_w @ x + p.readout_b, rtol=0, atol=1e-12)
    with pytest.raises(DimensionMismatch):
        gru_forward(np.zeros(3), hidden, p)


def test_gru_batched_equals_single():
    rng = np.random.default_rng(4)
    p = init_rnn(SplineConfig(3, 1), rng, input_size=7, hidden_size=6)
    w = rng.normal(size=(5, 5))
    hidden = tuple(rng.normal(size=(5, 6)) for _ in p.layers)
    n, _ = gru_forward(w, hidden, p)
    for b in range(5):
        nb, _ = gru_forward(w[b], tuple(h[b] for h in hidden), p)
        np.testing.assert_allclose(n[b], nb, rtol=0, atol=1e-14)


# serialization ---------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["myopic", "parametrized", "rnn"])
def test_params_round_trip(kind):
    import json

    cfg = SplineConfig(4, 2)
    params = random_params(kind, cfg, np.random.default_rng(0))
    doc = json.loads(json.dumps(params_to_dict(cfg, params, best_epoch=3)))
    cfg2, back, extra = params_from_dict(doc)
    assert cfg2 == cfg and extra == {"best_epoch": 3} and back.kind == kind
    for k, v in params.arrays().items():
        np.testing.assert_array_equal(np.asarray(back.arrays()[k]), np.asarray(ad.value(v)))


def test_default_rnn_shapes():
    p = init_rnn(SplineConfig(4, 2), np.random.default_rng(0))
    assert len(p.layers) == 2 and p.hidden_size == 32 and p.input_size == 32
    assert p.embed_w.shape == (32, 6) and p.readout_w.shape == (2, 32)
    bound = 1 / math.sqrt(32)
    assert np.abs(p.layers[0].w_hh).max() <= bound
    np.testing.assert_array_equal(p.layers[1].b_ih, 0)


def test_rnn_doc_dimension_check():
    doc = params_to_dict(SplineConfig(4, 2), init_rnn(SplineConfig(4, 2), np.random.default_rng(0)))
    doc["phi"] = 1
    with pytest.raises(DimensionMismatch):
        params_from_dict(doc)
