import math

import numpy as np
import pytest

from src.core import functional as F
from src.core.tensor import Tape, Tensor, no_grad
from src.utils.errors import DegenerateVectorError, DimensionError, InvalidValueError, RankError


def grad_of(f, *inputs):
    with Tape():
        out = f(*inputs)
        out.backward()
    return [t.grad for t in inputs]


class TestTape:
    def test_node_ids_increase_in_creation_order(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = x * 2.0
            z = y + 1.0
            z.sum()
        ids = [node.id for node in tape.nodes]
        assert ids == sorted(ids)
        assert len(set(ids)) == len(ids)

    def test_shared_input_gradient_accumulates(self):
        x = Tensor([3.0], requires_grad=True)
        (g,) = grad_of(lambda t: (t * t + t).sum(), x)
        assert g == pytest.approx([7.0])

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with Tape() as tape, no_grad():
            y = x * 2.0
        assert tape.nodes == []
        assert y.node is None

    def test_input_ids_link_to_producing_nodes(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape():
            y = x * 2.0
            z = y + 1.0
        assert y.node.input_ids == (None, None)
        assert z.node.input_ids == (y.node.id, None)

    def test_ops_outside_a_tape_are_not_retained(self):
        assert Tape.current() is None
        x = Tensor([3.0], requires_grad=True)
        y = (x * x + x).sum()
        assert y.node.tape is None
        y.backward()
        assert x.grad == pytest.approx([7.0])

    def test_nested_tapes_record_on_the_innermost(self):
        x = Tensor([1.0], requires_grad=True)
        with Tape() as outer:
            with Tape() as inner:
                y = x * 2.0
            z = y + 1.0
        assert [n.kind for n in inner.nodes] == ["mul"]
        assert [n.kind for n in outer.nodes] == ["add"]
        assert Tape.current() is None

    def test_gradient_shape_matches_tensor(self, rng):
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4,)), requires_grad=True)
        ga, gb = grad_of(lambda x, y: (x + y).sum(), a, b)
        assert ga.shape == a.shape
        assert gb.shape == b.shape
        assert np.allclose(gb, 3.0)


class TestMatmul:
    def test_identity(self, rng):
        B = rng.normal(size=(2, 3))
        assert np.array_equal(F.matmul(np.eye(2), B).data, B)

    def test_hand_expansion(self):
        out = F.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[0.0], [1.0]]))
        assert out.data.tolist() == [[2.0], [4.0]]

    def test_zeros(self, rng):
        out = F.matmul(np.zeros((2, 3)), rng.normal(size=(3, 4)))
        assert out.shape == (2, 4)
        assert not out.data.any()

    def test_matches_triple_loop(self, rng):
        a, b = rng.normal(size=(3, 5)), rng.normal(size=(5, 2))
        expected = [[sum(a[i, k] * b[k, j] for k in range(5)) for j in range(2)] for i in range(3)]
        assert np.allclose(F.matmul(a, b).data, expected, atol=1e-12)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError) as err:
            F.matmul(np.ones((2, 3)), np.ones((4, 2)))
        assert "(2, 3)" in err.value.message and "(4, 2)" in err.value.message

    def test_vector_is_rank_error(self):
        with pytest.raises(RankError):
            F.matmul(np.ones(3), np.ones((3, 2)))

    def test_gradients(self, rng):
        a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        ga, gb = grad_of(lambda x, y: (x @ y).sum(), a, b)
        assert np.allclose(ga, np.ones((2, 4)) @ b.data.T)
        assert np.allclose(gb, a.data.T @ np.ones((2, 4)))


class TestKron:
    def test_identity_scalar(self, rng):
        B = rng.normal(size=(2, 3))
        assert np.array_equal(F.kron([[1.0]], B).data, B)

    def test_block_diagonal(self, rng):
        B = rng.normal(size=(2, 2))
        out = F.kron(np.eye(2), B).data
        assert np.array_equal(out[:2, :2], B)
        assert np.array_equal(out[2:, 2:], B)
        assert not out[:2, 2:].any() and not out[2:, :2].any()

    def test_derived_example(self):
        out = F.kron([[1.0, 2.0], [3.0, 4.0]], [[0.0, 1.0], [1.0, 0.0]])
        assert out.data.tolist() == [[0, 1, 0, 2], [1, 0, 2, 0], [0, 3, 0, 4], [3, 0, 4, 0]]

    def test_matches_quadruple_loop(self, rng):
        a, b = rng.normal(size=(2, 3)), rng.normal(size=(4, 2))
        expected = np.zeros((8, 6))
        for i in range(2):
            for j in range(3):
                for k in range(4):
                    for m in range(2):
                        expected[i * 4 + k, j * 2 + m] = a[i, j] * b[k, m]
        assert np.allclose(F.kron(a, b).data, expected, atol=1e-14)

    def test_rank_error(self):
        with pytest.raises(RankError):
            F.kron(np.ones(3), np.ones((2, 2)))

    def test_gradients(self, rng):
        a = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
        b = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        w = rng.normal(size=(6, 4))
        ga, gb = grad_of(lambda x, y: (F.kron(x, y) * w).sum(), a, b)
        expected_a = np.array([[(w[i * 3:(i + 1) * 3, j * 2:(j + 1) * 2] * b.data).sum() for j in range(2)] for i in range(2)])
        assert np.allclose(ga, expected_a)
        assert gb.shape == (3, 2)


class TestCosineSim:
    def test_parallel(self):
        assert F.cosine_sim([1.0, 0.0], [1.0, 0.0]).item() == pytest.approx(1.0)

    def test_orthogonal(self):
        assert F.cosine_sim([1.0, 0.0], [0.0, 1.0]).item() == pytest.approx(0.0)

    def test_half_angle(self):
        assert F.cosine_sim([1.0, 1.0], [1.0, 0.0]).item() == pytest.approx(1 / math.sqrt(2), abs=1e-12)

    def test_bounded(self, rng):
        for _ in range(20):
            value = F.cosine_sim(rng.normal(size=5), rng.normal(size=5)).item()
            assert -1.0 - 1e-12 <= value <= 1.0 + 1e-12

    def test_zero_vector(self):
        with pytest.raises(DegenerateVectorError):
            F.cosine_sim([0.0, 0.0], [1.0, 0.0])

    def test_matrix_matches_pairwise(self, rng):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(2, 4))
        sim = F.cosine_matrix(a, b).data
        for i in range(3):
            for j in range(2):
                assert sim[i, j] == pytest.approx(F.cosine_sim(a[i], b[j]).item(), abs=1e-12)


class TestLogSoftmaxRow:
    def test_constant_row(self):
        out = F.log_softmax_row([2.5, 2.5, 2.5]).data
        assert np.allclose(out, -math.log(3), atol=1e-15)

    def test_zeros(self):
        assert np.allclose(F.log_softmax_row([0.0, 0.0]).data, -math.log(2), atol=1e-15)

    def test_stability(self):
        out = F.log_softmax_row([1000.0, 0.0]).data
        assert np.isfinite(out).all()
        assert out[0] == pytest.approx(0.0, abs=1e-300)
        assert out[1] == pytest.approx(-1000.0)

    def test_exp_sums_to_one(self, rng):
        out = F.log_softmax_row(rng.normal(scale=30.0, size=50)).data
        assert abs(np.exp(out).sum() - 1.0) < 1e-12

    @pytest.mark.parametrize("shift", [-250.0, 3.5, 800.0])
    def test_adding_a_constant_leaves_output_unchanged(self, rng, shift):
        x = rng.normal(size=12)
        assert np.allclose(F.log_softmax_row(x + shift).data, F.log_softmax_row(x).data, rtol=0.0, atol=1e-12)

    def test_nan_input(self):
        with pytest.raises(InvalidValueError):
            F.log_softmax_row([0.0, float("nan")])


class TestElementwise:
    def test_broadcast_error(self):
        with pytest.raises(DimensionError):
            F.add(np.ones((2, 3)), np.ones((4,)))

    def test_gelu_matches_tanh_approximation(self):
        x = np.linspace(-3, 3, 7)
        expected = 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))
        assert np.allclose(F.gelu(x).data, expected, atol=1e-15)

    def test_layer_norm_normalizes(self, rng):
        x = rng.normal(size=(3, 6)) * 5 + 2
        out = F.layer_norm(x, np.ones(6), np.zeros(6)).data
        assert np.allclose(out.mean(axis=-1), 0.0, atol=1e-12)
        assert np.allclose(out.var(axis=-1), 1.0, atol=1e-3)
