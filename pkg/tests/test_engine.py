import numpy as np
import pytest

from longgnn import engine as ng
from longgnn.engine import Tensor, backward
from longgnn.errors import ContractError, DimensionError
from longgnn.optim import Adam, adam_step


# --- independent oracle: central finite differences ------------------------

def _scalar(x):
    return x.item() if isinstance(x, Tensor) else float(x)


def fd_grads(f, tensors, h=1e-5):
    """Gradient of the scalar f() w.r.t. each tensor, by central differences."""
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            with ng.no_grad():
                fp = _scalar(f())
            flat[i] = orig - h
            with ng.no_grad():
                fm = _scalar(f())
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def analytic_grads(f, tensors):
    ng.reset_tape()
    for t in tensors:
        t.grad = None
    loss = f()
    backward(loss)
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]


def assert_close_rel(a, b, rtol=1e-4, atol=1e-8):
    a = np.asarray(a)
    b = np.asarray(b)
    denom = np.maximum(np.abs(a), np.abs(b))
    assert np.all(np.abs(a - b) <= rtol * denom + atol), f"max err {np.abs(a - b).max()}"


def check_grads(f, tensors, rtol=1e-4):
    num = fd_grads(f, tensors)
    ana = analytic_grads(f, tensors)
    for n, a in zip(num, ana):
        assert_close_rel(a, n, rtol=rtol)


# --- matmul -----------------------------------------------------------------

def test_matmul_identity():
    a = Tensor(np.eye(2))
    b = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ng.matmul(a, b).data, b.data)


def test_matmul_projector():
    p = Tensor([[1.0, 0.0], [0.0, 0.0]])
    v = Tensor([[5.0], [7.0]])
    assert np.array_equal(ng.matmul(p, v).data, [[5.0], [0.0]])


def test_matmul_shape_error():
    with pytest.raises(DimensionError):
        ng.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    r = rng.normal(size=(3, 2))

    # loss = sum(R * (A @ B)); FD vs analytic within 1e-5 relative
    def loss():
        return ng.sum_reduce(ng.mul(ng.matmul(a, b), Tensor(r)))

    num = fd_grads(lambda: float((a.data @ b.data * r).sum()), [a, b])
    ana = analytic_grads(loss, [a, b])
    for n, g in zip(num, ana):
        assert_close_rel(g, n, rtol=1e-5)


# --- concat -----------------------------------------------------------------

def test_concat_values():
    out = ng.concat([Tensor([1.0, 2.0]), Tensor([3.0])])
    assert np.array_equal(out.data, [1.0, 2.0, 3.0])


def test_concat_single_is_identity():
    t = Tensor([4.0, 5.0])
    assert np.array_equal(ng.concat([t]).data, t.data)


def test_concat_dim_error():
    with pytest.raises(DimensionError):
        ng.concat([Tensor(np.ones((2, 2))), Tensor(np.ones((2, 3)))], axis=0)


def test_concat_gradient_splits():
    a = Tensor([1.0, 2.0], requires_grad=True)
    b = Tensor([3.0], requires_grad=True)
    loss = ng.sum_reduce(ng.concat([a, b]))
    backward(loss)
    assert np.array_equal(a.grad, [1.0, 1.0])
    assert np.array_equal(b.grad, [1.0])


# --- elementwise / reductions ------------------------------------------------

def test_relu_values():
    assert np.array_equal(ng.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])


def test_exp_zero():
    assert ng.exp(Tensor([0.0])).data[0] == 1.0


def test_mean_reduce_axis0():
    out = ng.mean_reduce(Tensor([[1.0, 3.0], [5.0, 7.0]]), axis=0)
    assert np.array_equal(out.data, [3.0, 5.0])


def test_elementwise_shape_error():
    with pytest.raises(DimensionError):
        ng.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))


def test_scalar_broadcast():
    t = Tensor([[1.0, 2.0]], requires_grad=True)
    s = Tensor(3.0, requires_grad=True)
    loss = ng.sum_reduce(ng.mul(t, s))
    backward(loss)
    assert np.array_equal(t.grad, [[3.0, 3.0]])
    assert s.grad.reshape(()) == 3.0


# --- cosine -------------------------------------------------------------------

def test_cosine_self():
    v = Tensor([3.0, 4.0])
    assert ng.cosine(v, v).item() == pytest.approx(1.0, abs=1e-15)


def test_cosine_orthogonal():
    assert ng.cosine(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == 0.0


def test_cosine_zero_norm_guard():
    out = ng.cosine(Tensor([0.0, 0.0]), Tensor([1.0, 2.0]))
    assert out.item() == 0.0
    # gradient through the guard is zero
    a = Tensor([0.0, 0.0], requires_grad=True)
    loss = ng.cosine(a, Tensor([1.0, 2.0]))
    backward(loss)
    assert np.array_equal(a.grad, [0.0, 0.0]) or a.grad is None


def test_cosine_length_mismatch():
    with pytest.raises(DimensionError):
        ng.cosine(Tensor([1.0]), Tensor([1.0, 2.0]))


# --- backward ------------------------------------------------------------------

def test_backward_linear():
    x = np.array([2.0, -1.0, 0.5])
    w = Tensor([1.0, 1.0, 1.0], requires_grad=True)
    loss = ng.sum_reduce(ng.mul(w, Tensor(x)))
    backward(loss)
    assert np.array_equal(w.grad, x)


def test_backward_dead_relu():
    w = Tensor(2.0, requires_grad=True)
    loss = ng.mul(ng.relu(Tensor(-5.0)), w)
    backward(loss)
    assert w.grad.reshape(()) == 0.0


def test_backward_requires_scalar():
    w = Tensor([1.0, 2.0], requires_grad=True)
    out = ng.mul(w, 2.0)
    with pytest.raises(ContractError):
        backward(out)
    ng.reset_tape()


def test_backward_empty_tape():
    with pytest.raises(ContractError):
        backward(Tensor(1.0, requires_grad=True))


def test_backward_composite_mlp_matches_fd():
    rng = np.random.default_rng(7)
    x = Tensor(rng.normal(size=(4, 3)) + 0.3)
    w1 = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    w2 = Tensor(rng.normal(size=(5, 1)), requires_grad=True)

    def loss():
        h = ng.relu(ng.matmul(x, w1))
        out = ng.matmul(h, w2)
        return ng.mean_reduce(ng.mul(out, out))

    def loss_value():
        h = np.maximum(x.data @ w1.data, 0.0)
        out = h @ w2.data
        return float((out * out).mean())

    num = fd_grads(loss_value, [w1, w2])
    ana = analytic_grads(loss, [w1, w2])
    for n, g in zip(num, ana):
        assert_close_rel(g, n, rtol=1e-4)


# --- structural ops gradients ----------------------------------------------

def _margin_away_from_kinks(arr, margin=0.05):
    arr = np.where(np.abs(arr) < margin, arr + 2 * margin, arr)
    return arr


@pytest.mark.parametrize("seed", range(5))
def test_structural_ops_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    a = Tensor(_margin_away_from_kinks(rng.normal(size=(5, 3))), requires_grad=True)
    b = Tensor(_margin_away_from_kinks(rng.normal(size=(4, 3))), requires_grad=True)
    v = Tensor(rng.normal(size=(3,)), requires_grad=True)
    idx = rng.integers(0, 5, size=6)
    seg = np.sort(rng.integers(0, 4, size=5))
    upd_idx = np.array([0, 2, 3])
    w = rng.normal(size=(5 * 4, 3))

    def f():
        g1 = ng.gather_rows(a, idx)                      # (6,3), repeated rows
        s1 = ng.segment_mean(g1, np.array([0, 0, 1, 2, 2, 2]), 4)
        p1 = ng.mul(ng.pair_add(a, b), Tensor(w))        # (20,3)
        r1 = ng.row_update(a, upd_idx, ng.gather_rows(b, np.array([0, 1, 2])))
        c1 = ng.row_cosine(a, ng.gather_rows(b, np.array([0, 1, 2, 3, 0])))
        e1 = ng.expand_cols(c1, 3)                       # (5,3)
        t = ng.add_rowvec(ng.add(s1, ng.relu(ng.gather_rows(r1, np.arange(4)))), v)
        parts = [
            ng.sum_reduce(t),
            ng.scale(ng.sum_reduce(ng.reshape(p1, (60,))), 0.05),
            ng.sum_reduce(e1),
            ng.sum_reduce(ng.exp(ng.mul(ng.mean_reduce(s1, axis=0), 0.1))),
        ]
        total = parts[0]
        for term in parts[1:]:
            total = ng.add(total, term)
        return total

    check_grads(f, [a, b, v], rtol=2e-4)


def test_segment_mean_empty_segment_is_zero():
    t = Tensor(np.ones((3, 2)))
    out = ng.segment_mean(t, np.array([0, 0, 2]), 4)
    assert np.array_equal(out.data[1], [0.0, 0.0])
    assert np.array_equal(out.data[3], [0.0, 0.0])
    assert np.array_equal(out.data[0], [1.0, 1.0])


def test_row_cosine_guard_rows():
    a = Tensor(np.array([[0.0, 0.0], [1.0, 0.0]]))
    b = Tensor(np.array([[1.0, 1.0], [1.0, 0.0]]))
    out = ng.row_cosine(a, b)
    assert np.array_equal(out.data, [0.0, 1.0])


# --- determinism ---------------------------------------------------------------

def test_forward_replay_determinism():
    def run():
        rng = np.random.default_rng(123)
        x = Tensor(rng.normal(size=(6, 4)))
        w = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        h = ng.relu(ng.matmul(x, w))
        out = ng.sum_reduce(h)
        val = out.item()
        ng.reset_tape()
        return val

    assert run() == run()


# --- Adam ----------------------------------------------------------------------

def test_adam_descent_direction():
    w = Tensor(1.0, requires_grad=True)
    opt = Adam([w], lr=0.1)
    opt.zero_grad()
    loss = ng.mul(w, w)
    backward(loss)
    opt.step()
    assert abs(w.data) < 1.0


def test_adam_zero_gradient_no_change():
    w = Tensor([1.5, -2.0], requires_grad=True)
    before = w.data.copy()
    opt = Adam([w], lr=0.1)
    opt.zero_grad()
    opt.step()
    assert np.array_equal(w.data, before)
    assert opt.t == 1


def test_adam_missing_grad_contract():
    w = Tensor(1.0, requires_grad=True)
    opt = Adam([w], lr=0.1)
    with pytest.raises(ContractError):
        opt.step()


def test_adam_reaches_quadratic_minimizer():
    # f(w) = (w0-0.3)^2 + 2*(w1+0.7)^2, analytic minimizer (0.3, -0.7)
    target = np.array([0.3, -0.7])
    w = Tensor([1.0, 1.0], requires_grad=True)
    opt = Adam([w], lr=0.05)
    for _ in range(200):
        opt.zero_grad()
        d = ng.sub(w, Tensor(target))
        loss = ng.sum_reduce(ng.mul(ng.mul(d, d), Tensor([1.0, 2.0])))
        backward(loss)
        opt.step()
    assert np.all(np.abs(w.data - target) < 1e-3)


def test_adam_monotone_after_burn_in():
    w = Tensor(1.0, requires_grad=True)
    opt = Adam([w], lr=0.01)
    losses = []
    for _ in range(60):
        opt.zero_grad()
        loss = ng.mul(w, w)
        losses.append(loss.item())
        backward(loss)
        opt.step()
    diffs = np.diff(losses[10:])
    assert np.all(diffs <= 1e-12)


def test_adam_step_function_entry():
    w = Tensor(1.0, requires_grad=True)
    opt = Adam([w], lr=0.1)
    opt.zero_grad()
    loss = ng.mul(w, w)
    backward(loss)
    adam_step(opt.params, opt)
    assert abs(w.data) < 1.0
