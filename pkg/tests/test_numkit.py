import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lhs.numkit import (
    Adam,
    NumericError,
    Tape,
    check_gradients,
    laplacian_step_residual,
    ops,
    randomized_svd,
    spectral_radius,
    svd_truncated,
    sym_normalize,
)

from conftest import make_graph


def jacobi_singular_values(m, sweeps=60):
    """One-sided Jacobi SVD: independent oracle for singular values."""
    a = np.array(m, dtype=np.float64)
    n = a.shape[1]
    for _ in range(sweeps):
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                alpha = a[:, i] @ a[:, i]
                beta = a[:, j] @ a[:, j]
                gamma = a[:, i] @ a[:, j]
                off = max(off, abs(gamma) / np.sqrt(alpha * beta + 1e-300))
                if abs(gamma) < 1e-15:
                    continue
                zeta = (beta - alpha) / (2 * gamma)
                t = np.sign(zeta + (zeta == 0)) / (abs(zeta) + np.sqrt(1 + zeta * zeta))
                c = 1 / np.sqrt(1 + t * t)
                s = c * t
                ai = a[:, i].copy()
                a[:, i] = c * ai - s * a[:, j]
                a[:, j] = s * ai + c * a[:, j]
        if off < 1e-14:
            break
    return np.sort(np.linalg.norm(a, axis=0))[::-1]


def low_rank_plus_noise(n, r, noise, seed, gap=4.0):
    rng = np.random.default_rng(seed)
    u, _ = np.linalg.qr(rng.standard_normal((n, r)))
    v, _ = np.linalg.qr(rng.standard_normal((n, r)))
    sv = np.linspace(10 * gap, gap * 2, r)
    return (u * sv) @ v.T + noise * rng.standard_normal((n, n)) / np.sqrt(n)


class TestTape:
    def test_sum_gradient_is_ones(self):
        t = Tape()
        w = t.param("w", np.arange(6.0).reshape(2, 3))
        assert np.array_equal(t.backward(ops.sum(w))["w"], np.ones((2, 3)))

    def test_frobenius_gradient(self):
        t = Tape()
        v = np.random.default_rng(0).standard_normal((3, 4))
        w = t.param("w", v)
        assert np.allclose(t.backward(ops.sum(ops.mul(w, w)))["w"], 2 * v)

    def test_non_scalar_loss(self):
        t = Tape()
        w = t.param("w", np.ones((2, 2)))
        with pytest.raises(ValueError, match="scalar"):
            t.backward(ops.mul(w, w))

    def test_unused_param_gets_zero(self):
        t = Tape()
        w = t.param("w", np.ones((2, 2)))
        t.param("unused", np.ones((3,)))
        g = t.backward(ops.sum(w))
        assert np.array_equal(g["unused"], np.zeros(3))

    def test_replay_bit_identical(self):
        rng = np.random.default_rng(1)
        t = Tape()
        w = t.param("w", rng.standard_normal((4, 3)))
        x = t.const(rng.standard_normal((5, 4)))
        loss = ops.sum(ops.log_sigmoid(ops.matmul(x, w)))
        assert t.evaluate(loss).tobytes() == loss.value.tobytes()


def _prim_cases():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((5, 4))
    b = rng.standard_normal((5, 4))
    c = rng.standard_normal((4, 3))
    mask = rng.random((5, 8)) < 0.7
    mask[:, 0] = True
    cases = {
        "matmul": lambda t: ops.sum(ops.matmul(t.param("a", a), t.param("c", c))),
        "mul_add_sub": lambda t: ops.sum(ops.sub(ops.mul(t.param("a", a), t.param("b", b)), t.param("b2", b))),
        "relu": lambda t: ops.sum(ops.mul(ops.relu(t.param("a", a)), t.const(b))),
        "prelu": lambda t: ops.sum(ops.mul(ops.prelu(t.param("a", a), t.param("s", [[0.3]])), t.const(b))),
        "sigmoid": lambda t: ops.sum(ops.mul(ops.sigmoid(t.param("a", a)), t.const(b))),
        "log_sigmoid": lambda t: ops.sum(ops.log_sigmoid(t.param("a", a))),
        "exp_log": lambda t: ops.sum(ops.log(ops.add(ops.exp(t.param("a", a)), 1.0))),
        "power": lambda t: ops.sum(ops.power(ops.add(ops.mul(t.param("a", a), t.param("a2", a)), 0.5), 2.5)),
        "row_cosine": lambda t: ops.sum(ops.row_cosine(t.param("a", a), t.param("b", b))),
        "cosine_matrix": lambda t: ops.sum(ops.mul(ops.cosine_matrix(t.param("a", a), t.param("b", b)),
                                                   t.const(rng.standard_normal((5, 5))))),
        "masked_lse": lambda t: ops.sum(ops.masked_logsumexp(
            ops.concat_cols(t.param("a", a), t.param("b", b)), mask)),
        "row_softmax": lambda t: ops.sum(ops.mul(ops.row_softmax(t.param("a", a)), t.const(b))),
        "take_rows_dot": lambda t: ops.sum(ops.row_dot(ops.take_rows(t.param("a", a), [0, 2, 2]),
                                                       ops.take_rows(t.param("b", b), [1, 3, 4]))),
        "cross_entropy": lambda t: ops.cross_entropy(ops.matmul(t.param("a", a), t.param("c", c)),
                                                     np.array([0, 1, 2, 1, 0]), np.array([0, 1, 3])),
        "transpose_mean": lambda t: ops.mean(ops.matmul(ops.transpose(t.param("a", a)), t.param("b", b))),
        "sum_axis": lambda t: ops.sum(ops.power(ops.sum(t.param("a", a), axis=1), 2.0)),
        "row_normalize": lambda t: ops.sum(ops.mul(ops.row_normalize(t.param("a", a)), t.const(b))),
    }
    return cases


@pytest.mark.parametrize("name", sorted(_prim_cases()))
def test_primitive_gradients(name):
    t = Tape()
    loss = _prim_cases()[name](t)
    errs = check_gradients(t, loss)
    assert max(errs.values()) < 1e-4, errs


class TestAdam:
    def test_minimises_quadratic(self):
        p = {"w": np.array([3.0, -2.0])}
        opt = Adam(p, lr=0.1)
        for _ in range(500):
            opt.step({"w": 2 * opt.params["w"]})
        assert np.abs(opt.params["w"]).max() < 1e-2


class TestSvd:
    def test_identity(self):
        f = svd_truncated(np.eye(3), 3)
        assert np.allclose(f.S, 1.0)

    def test_rank_one_exact(self):
        rng = np.random.default_rng(0)
        m = np.outer(rng.standard_normal(7), rng.standard_normal(5))
        assert np.abs(svd_truncated(m, 1).reconstruct() - m).max() < 1e-10

    def test_eckart_young_vs_jacobi(self):
        m = np.random.default_rng(3).standard_normal((20, 20))
        sv = jacobi_singular_values(m)
        f = svd_truncated(m, 5)
        err = np.linalg.norm(m - f.reconstruct())
        assert abs(err - np.sqrt(np.sum(sv[5:] ** 2))) < 1e-8
        assert np.allclose(f.S, sv[:5], atol=1e-8)

    @pytest.mark.parametrize("shape", [(12, 7), (7, 12)])
    def test_factor_invariants(self, shape):
        f = svd_truncated(np.random.default_rng(5).standard_normal(shape), 4)
        assert (np.diff(f.S) <= 0).all() and (f.S >= 0).all()
        assert np.allclose(f.U.T @ f.U, np.eye(4), atol=1e-6)
        assert np.allclose(f.Vt @ f.Vt.T, np.eye(4), atol=1e-6)

    def test_rank_out_of_range(self):
        with pytest.raises(ValueError):
            svd_truncated(np.eye(3), 4)
        with pytest.raises(ValueError):
            svd_truncated(np.eye(3), 0)

    def test_randomized_exact_low_rank(self):
        rng = np.random.default_rng(2)
        m = rng.standard_normal((60, 4)) @ rng.standard_normal((4, 50))
        assert np.abs(randomized_svd(m, 4, rng=1).reconstruct() - m).max() < 1e-8

    def test_randomized_within_5pct(self):
        m = low_rank_plus_noise(200, 6, 0.5, seed=4)
        exact = svd_truncated(m, 6).S
        approx = randomized_svd(m, 6, rng=3).S
        assert np.all(np.abs(approx - exact) <= 0.05 * exact)

    def test_randomized_no_oversample_still_runs(self):
        m = np.random.default_rng(0).standard_normal((40, 40))
        f = randomized_svd(m, 5, oversample=0, power_iters=0, rng=0)
        assert f.S.shape == (5,)


class TestNormalize:
    def test_zero_is_identity(self):
        assert np.array_equal(sym_normalize(np.zeros((4, 4))), np.eye(4))

    def test_two_node_complete(self):
        assert np.allclose(sym_normalize(np.array([[0, 1], [1, 0.0]])), 0.5)

    def test_rejects_asymmetric_or_negative(self):
        with pytest.raises(ValueError):
            sym_normalize(np.array([[0, 1], [0, 0.0]]))
        with pytest.raises(ValueError):
            sym_normalize(np.array([[0, -1], [-1, 0.0]]))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 20), st.integers(0, 2**31 - 1))
    def test_spectral_radius_bounded(self, n, seed):
        w = np.random.default_rng(seed).random((n, n))
        w = np.triu(w, 1)
        assert spectral_radius(sym_normalize(w + w.T)) <= 1 + 1e-9


class TestLaplacianStep:
    def test_zero_signal(self):
        g = make_graph([(0, 1), (1, 2)], [0, 0, 1])
        assert laplacian_step_residual(np.zeros((3, 2)), g) == 0.0

    def test_random_30_node(self):
        rng = np.random.default_rng(11)
        pairs = [(i, j) for i in range(30) for j in range(i + 1, 30) if rng.random() < 0.2]
        g = make_graph(pairs, rng.integers(0, 2, 30))
        x = rng.standard_normal((30, 5))
        assert laplacian_step_residual(x, g) <= 1e-8 * np.linalg.norm(x)

    def test_other_lambda_differs(self):
        g = make_graph([(0, 1), (1, 2)], [0, 0, 1])
        x = np.arange(6.0).reshape(3, 2)
        assert laplacian_step_residual(x, g, lam=0.3) > 1e-3


def test_numeric_error_is_arithmetic():
    assert issubclass(NumericError, ArithmeticError)
