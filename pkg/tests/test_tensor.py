import struct

import numpy as np
import pytest

from avcl.errors import (ContractError, DegenerateInputError, DimensionError,
                         DomainError, SerializationError)
from avcl.tensor import (Tensor, concat, grad_check, load_tensor, save_tensor,
                         tensor_from_buffer, tensor_to_bytes)


# ----------------------------------------------------------------- forward

def test_matmul_identity():
    eye = Tensor(np.eye(2))
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal((eye @ m).data, m.data)


def test_matmul_hand_product():
    a = Tensor([[1.0, 2.0]])
    b = Tensor([[3.0], [4.0]])
    np.testing.assert_array_equal((a @ b).data, [[11.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(3, 4\).*\(5, 2\)"):
        Tensor(np.zeros((3, 4))) @ Tensor(np.zeros((5, 2)))


def test_matmul_associativity():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        a, b, c = (Tensor(rng.standard_normal(s))
                   for s in ((3, 4), (4, 5), (5, 2)))
        left = ((a @ b) @ c).data
        right = (a @ (b @ c)).data
        assert np.max(np.abs(left - right)) < 1e-9


def test_relu_sign_cases():
    np.testing.assert_array_equal(Tensor([-1.0, 0.0, 2.0]).relu().data, [0.0, 0.0, 2.0])


def test_exp_identity():
    np.testing.assert_array_equal(Tensor([0.0]).exp().data, [1.0])


def test_log_domain_error():
    with pytest.raises(DomainError):
        Tensor([1.0, 0.0]).log()
    with pytest.raises(DomainError):
        Tensor([-1.0]).log()


def test_div_by_zero_errors():
    with pytest.raises(DomainError):
        Tensor([1.0]) / Tensor([0.0])
    with pytest.raises(DomainError):
        Tensor([1.0]) / 0.0


def test_elementwise_shape_error():
    with pytest.raises(DimensionError, match=r"\(2,\).*\(3,\)"):
        Tensor([1.0, 2.0]) + Tensor([1.0, 2.0, 3.0])


def test_scalar_broadcast():
    t = Tensor([[1.0, -2.0]])
    np.testing.assert_array_equal((t * 2.0).data, [[2.0, -4.0]])
    np.testing.assert_array_equal((t + 1.0).data, [[2.0, -1.0]])
    np.testing.assert_array_equal(t.scale(-1.0).data, [[-1.0, 2.0]])


def test_sum_and_l2_norm_values():
    assert Tensor([1.0, 2.0, 3.0]).sum().item() == 6.0
    assert Tensor([3.0, 4.0]).l2_norm().item() == 5.0
    np.testing.assert_array_equal(Tensor(np.ones((2, 3))).sum(axis=0).data, [2.0, 2.0, 2.0])


def test_l2_norm_zero_vector_error_only_with_grad():
    assert Tensor([0.0, 0.0]).l2_norm().item() == 0.0  # no grad needed: fine
    with pytest.raises(DegenerateInputError):
        Tensor([0.0, 0.0], requires_grad=True).l2_norm()


def test_concat_basic_and_row_mismatch():
    out = concat(Tensor([[1.0]]), Tensor([[2.0]]))
    np.testing.assert_array_equal(out.data, [[1.0, 2.0]])
    with pytest.raises(DimensionError, match="row-count mismatch"):
        concat(Tensor(np.zeros((2, 1))), Tensor(np.zeros((3, 1))))


def test_concat_slice_round_trip_bit_exact():
    rng = np.random.default_rng(7)
    a = Tensor(rng.standard_normal((3, 4)))
    b = Tensor(rng.standard_normal((3, 2)))
    joined = concat(a, b)
    back_a = joined.slice(0, 4).data
    back_b = joined.slice(4, 6).data
    assert back_a.tobytes() == a.data.tobytes()
    assert back_b.tobytes() == b.data.tobytes()


# ---------------------------------------------------------------- backward

def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_square_gives_2x():
    x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, 2.0 * x.data)


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2.0).backward()


def test_backward_reuse_accumulates_both_paths():
    x = Tensor([1.0, 2.0], requires_grad=True)
    (x.sum() + x.sum()).backward()
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])


def test_repeated_backward_accumulates_on_leaves():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = x.sum()
    loss.backward()
    loss.backward()
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])
    x.zero_grad()
    assert x.grad is None


def test_relu_gradient_at_zero_is_zero():
    x = Tensor([0.0, 1.0, -1.0], requires_grad=True)
    x.relu().sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


def test_concat_gradient_splits_to_ones():
    a = Tensor(np.zeros((2, 2)), requires_grad=True)
    b = Tensor(np.zeros((2, 3)), requires_grad=True)
    concat(a, b).sum().backward()
    np.testing.assert_array_equal(a.grad, np.ones((2, 2)))
    np.testing.assert_array_equal(b.grad, np.ones((2, 3)))


def test_matmul_grad_of_sum_is_column_sums():
    rng = np.random.default_rng(3)
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 2)))
    (a @ b).sum().backward()
    expected = np.broadcast_to(b.data.sum(axis=1), (3, 4))
    np.testing.assert_allclose(a.grad, expected, rtol=1e-12)
    assert grad_check(lambda t: (t @ b).sum(), a) < 1e-4


def test_mul_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    y = Tensor(rng.standard_normal(8))
    x = Tensor(rng.standard_normal(8))
    assert grad_check(lambda t: (t * y).sum(), x) < 1e-4


# --------------------------------------------------------------- grad_check

def test_grad_check_of_sum_is_tiny():
    x = Tensor(np.random.default_rng(0).standard_normal((3, 3)))
    assert grad_check(lambda t: t.sum(), x) < 1e-10


def test_grad_check_validates_eps_and_scalar_output():
    x = Tensor([1.0, 2.0])
    with pytest.raises(ContractError):
        grad_check(lambda t: t.sum(), x, eps=0.5)
    with pytest.raises(ContractError):
        grad_check(lambda t: t * 2.0, x)


# ------------------------------------------------------------ serialization

def test_serialized_header_layout():
    t = Tensor(np.arange(6.0).reshape(2, 3))
    blob = tensor_to_bytes(t)
    rank, d0, d1 = struct.unpack_from("<III", blob, 0)
    assert (rank, d0, d1) == (2, 2, 3)
    values = np.frombuffer(blob, dtype="<f8", offset=12)
    np.testing.assert_array_equal(values, np.arange(6.0))


def test_file_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(5)
    data = rng.standard_normal((4, 3, 2))
    data[0, 0, 0] = -0.0  # sign bit must survive
    path = tmp_path / "t.bin"
    save_tensor(Tensor(data), path)
    loaded = load_tensor(path)
    assert loaded.data.tobytes() == data.tobytes()
    assert loaded.shape == data.shape


def test_truncated_record_raises():
    blob = tensor_to_bytes(Tensor(np.ones((3, 3))))
    with pytest.raises(SerializationError):
        tensor_from_buffer(blob[:-8])
    with pytest.raises(SerializationError):
        tensor_from_buffer(blob[:6])


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "t.bin"
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(Tensor([1.0])) + b"junk")
    with pytest.raises(SerializationError):
        load_tensor(path)
