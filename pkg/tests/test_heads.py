import numpy as np
import pytest

from longgnn import engine as ng
from longgnn import graph as gr
from longgnn import heads as hd
from longgnn import layers as ly
from longgnn.engine import Tensor

from test_data import make_ds


def forward_setup(counts=(3, 2), p=4, d=5, L=2, K=1, seed=0, missing_x=0.2):
    ds = make_ds(counts, p=p, seed=seed, missing_x=missing_x)
    g = gr.build_graph(ds)
    params = ly.init_params(p=p, d=d, bipartite_layers=L, temporal_layers=K, gamma=1.5, seed=seed)
    heads = hd.init_heads(p=p, d=d, seed=seed)
    return ds, g, params, heads


# --- independent brute-force oracle for the over-smoothing gap -----------------

def oracle_gap_subject(embs):
    n_k = len(embs)
    acc = 0.0
    for m in range(1, n_k + 1):
        if m <= 2:
            continue
        remote = 0.0
        for mp in range(1, m - 1):
            remote += _cos(embs[mp - 1], embs[m - 1])
        remote /= (m - 2)
        acc += remote - _cos(embs[m - 1], embs[m - 2])
    return acc / n_k if n_k else 0.0


def _cos(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def oracle_gap_batch(h, chains):
    return sum(oracle_gap_subject(h[c]) for c in chains) / len(chains)


# --- imputation head --------------------------------------------------------------

def test_impute_output_shape():
    ds, g, params, heads = forward_setup()
    state, _ = ly.full_forward(g, params)
    d_hat = hd.impute_covariates(state, g, heads)
    assert d_hat.shape == (ds.N, ds.p)


def test_impute_pairwise_matches_concat_reference():
    ds, g, params, heads = forward_setup(seed=3)
    state, _ = ly.full_forward(g, params)
    with ng.no_grad():
        d_hat = hd.impute_covariates(state, g, heads)
    for obs, cov in [(0, 0), (1, 3), (4, 2)]:
        assert d_hat.data[obs, cov] == pytest.approx(hd.impute_single(state, heads, obs, cov), abs=1e-12)


def test_identical_embeddings_identical_rows():
    ds, g, params, heads = forward_setup(seed=4)
    state, _ = ly.full_forward(g, params)
    state.h_obs.data[1] = state.h_obs.data[0]
    with ng.no_grad():
        d_hat = hd.impute_covariates(state, g, heads)
    assert np.array_equal(d_hat.data[0], d_hat.data[1])


# --- response head ------------------------------------------------------------------

def test_predict_shape_and_purity():
    ds, g, params, heads = forward_setup(seed=5)
    state, _ = ly.full_forward(g, params)
    with ng.no_grad():
        d_hat = hd.impute_covariates(state, g, heads)
        d_hat.data[2] = d_hat.data[0]
        y_hat = hd.predict_response(d_hat, heads)
    assert y_hat.shape == (ds.N,)
    assert y_hat.data[2] == y_hat.data[0]


def test_gradient_reaches_first_bipartite_layer():
    ds, g, params, heads = forward_setup(seed=6)
    ng.reset_tape()
    state, _ = ly.full_forward(g, params)
    d_hat = hd.impute_covariates(state, g, heads)
    y_hat = hd.predict_response(d_hat, heads)
    loss = ng.sum_reduce(ng.mul(y_hat, y_hat))
    ng.backward(loss)
    assert params.P[0].grad is not None
    assert np.any(params.P[0].grad != 0.0)


def test_observed_override_replaces_entries():
    ds, g, params, heads = forward_setup(seed=7)
    state, _ = ly.full_forward(g, params)
    with ng.no_grad():
        d_hat = hd.impute_covariates(state, g, heads)
        mask = ds.M_O.astype(np.float64)
        y_a = hd.predict_response(d_hat, heads, observed=(mask, ds.D))
        x = np.where(ds.M_O == 1, ds.D, d_hat.data)
        y_b = heads.predict(Tensor(x))
    assert np.allclose(y_a.data, y_b.data.reshape(-1), atol=1e-12)


# --- over-smoothing gap ----------------------------------------------------------------

def test_gap_zero_for_short_chains():
    assert hd.madgap_subject(np.ones((1, 4))) == 0.0
    assert hd.madgap_subject(np.ones((2, 4))) == 0.0


def test_gap_hand_case():
    embs = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    assert hd.madgap_subject(embs) == pytest.approx(1.0 / 3.0, abs=1e-15)


def test_gap_identical_embeddings_zero():
    assert hd.madgap_subject(np.tile([0.3, 0.4], (5, 1))) == pytest.approx(0.0, abs=1e-15)


def test_gap_batch_two_point_chains_zero():
    ds = make_ds((2, 2), p=3, seed=8)
    g = gr.build_graph(ds)
    h = Tensor(np.random.default_rng(0).normal(size=(4, 3)))
    assert hd.madgap_batch(h, g).item() == 0.0


def test_gap_batch_is_mean_of_subjects():
    ds = make_ds((4, 5), p=3, seed=9)
    g = gr.build_graph(ds)
    h = np.random.default_rng(1).normal(size=(9, 6))
    per = [hd.madgap_subject(h[c]) for c in g.chains]
    got = hd.madgap_batch(Tensor(h), g).item()
    assert got == pytest.approx(sum(per) / 2, abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_gap_batch_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    counts = tuple(int(c) for c in rng.integers(1, 7, size=rng.integers(1, 5)))
    ds = make_ds(counts, p=2, seed=seed)
    g = gr.build_graph(ds)
    h = rng.normal(size=(ds.N, 5))
    got = hd.madgap_batch(Tensor(h), g).item()
    assert got == pytest.approx(oracle_gap_batch(h, g.chains), abs=1e-10)


def test_gap_invariant_to_positive_rescaling():
    ds = make_ds((5,), p=2, seed=10)
    g = gr.build_graph(ds)
    h = np.random.default_rng(2).normal(size=(5, 4))
    base = hd.madgap_batch(Tensor(h), g).item()
    h2 = h.copy()
    h2[3] *= 3.7
    assert hd.madgap_batch(Tensor(h2), g).item() == pytest.approx(base, abs=1e-12)


def test_gap_gradient_matches_finite_differences():
    ds = make_ds((4, 3), p=2, seed=11)
    g = gr.build_graph(ds)
    h = Tensor(np.random.default_rng(3).normal(size=(7, 4)), requires_grad=True)
    ng.reset_tape()
    out = hd.madgap_batch(h, g)
    ng.backward(out)
    analytic = h.grad.copy()
    step = 1e-6
    flat = h.data.reshape(-1)
    for i in range(0, flat.size, 3):
        orig = flat[i]
        flat[i] = orig + step
        fp = oracle_gap_batch(h.data, g.chains)
        flat[i] = orig - step
        fm = oracle_gap_batch(h.data, g.chains)
        flat[i] = orig
        num = (fp - fm) / (2 * step)
        assert analytic.reshape(-1)[i] == pytest.approx(num, abs=2e-7)


# --- loss -----------------------------------------------------------------------------

def test_loss_zero_for_perfect_predictions():
    ds = make_ds((3,), p=2, seed=12)
    g = gr.build_graph(ds)
    terms = hd.training_loss(Tensor(ds.D), Tensor(ds.Y), ds, Tensor(0.0), lam=0.001)
    assert terms.total == 0.0
    assert terms.mse_response == 0.0 and terms.mse_impute == 0.0


def test_loss_lambda_zero_reduces_to_mse():
    ds = make_ds((3,), p=2, seed=13)
    rng = np.random.default_rng(0)
    d_hat = Tensor(ds.D + rng.normal(size=ds.D.shape))
    y_hat = Tensor(ds.Y + rng.normal(size=ds.N))
    with_gap = hd.training_loss(d_hat, y_hat, ds, Tensor(0.7), lam=0.0)
    assert with_gap.total == pytest.approx(with_gap.mse_response + with_gap.mse_impute, abs=1e-15)


def test_loss_hand_case():
    # one observed response with error 0.2, no observed covariates, gap 0.5
    ds = make_ds((1,), p=1, seed=14)
    ds.M_O[:] = 0
    ds.D[:] = 0.0
    ds.Y[:] = 1.0
    with pytest.warns(UserWarning):
        terms = hd.training_loss(Tensor(np.zeros((1, 1))), Tensor(np.array([1.2])), ds,
                                 Tensor(0.5), lam=0.001)
    assert terms.total == pytest.approx(0.2 ** 2 - 0.001 * 0.5, abs=1e-12)
    assert terms.total == pytest.approx(0.0395, abs=1e-12)


def test_loss_ignores_masked_entries_bitwise():
    ds = make_ds((4,), p=3, seed=15, missing_x=0.5, missing_y=0.5)
    rng = np.random.default_rng(1)
    d_hat = Tensor(rng.normal(size=ds.D.shape))
    y_hat = Tensor(rng.normal(size=ds.N))
    a = hd.training_loss(d_hat, y_hat, ds, Tensor(0.1), lam=0.001).total
    ds2 = make_ds((4,), p=3, seed=15, missing_x=0.5, missing_y=0.5)
    ds2.D[ds2.M_O == 0] = 99.0
    ds2.Y[ds2.M_Y == 0] = -99.0
    b = hd.training_loss(d_hat, y_hat, ds2, Tensor(0.1), lam=0.001).total
    assert a == b


def test_loss_no_observed_responses_warns_and_drops():
    ds = make_ds((2,), p=2, seed=16)
    ds.M_Y[:] = 0
    ds.Y[:] = 0.0
    with pytest.warns(UserWarning):
        terms = hd.training_loss(Tensor(ds.D), Tensor(np.ones(2)), ds, Tensor(0.0), lam=0.001)
    assert terms.mse_response == 0.0
    assert terms.total == terms.mse_impute
