import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from mpca_tl.tensor_core import ShapeError, Tensor3, concat, fold_mode2, mode2_product, slice_, stack, unfold_mode2

import oracles

dims = st.tuples(st.integers(1, 4), st.integers(1, 5), st.integers(1, 4))
unit = st.floats(-1, 1, allow_nan=False)


@st.composite
def tensors(draw):
    i1, i2, i3 = draw(dims)
    return Tensor3(draw(hnp.arrays(np.float64, (i3, i1, i2), elements=unit)))


def test_unfold_single_value():
    assert unfold_mode2(Tensor3(np.full((1, 1, 1), 2.5))).tolist() == [[2.5]]


def test_unfold_hand_enumeration():
    t = Tensor3(np.array([[[1, 2, 3], [4, 5, 6]]], dtype=float))
    assert unfold_mode2(t).tolist() == [[1, 4], [2, 5], [3, 6]]


def test_fold_hand_enumeration():
    t = fold_mode2(np.array([[1, 4], [2, 5], [3, 6]], dtype=float), (2, 3, 1))
    assert t.data[0].tolist() == [[1, 2, 3], [4, 5, 6]]
    assert t.dims == (2, 3, 1)


def test_fold_zero_and_mismatch():
    assert not fold_mode2(np.zeros((3, 4)), (2, 3, 2)).data.any()
    with pytest.raises(ShapeError):
        fold_mode2(np.zeros((3, 5)), (2, 3, 2))


def test_column_order_matches_loop_oracle():
    rng = np.random.default_rng(1)
    t = Tensor3(rng.normal(size=(3, 2, 4)))
    expected = np.array(oracles.mode2_vectors(t.data)).T
    assert np.array_equal(unfold_mode2(t), expected)


def test_element_access_and_flat_layout():
    t = Tensor3.from_dims(np.arange(24), (2, 3, 4))
    # slice-major, then row, then column
    assert t[1, 2, 3] == 3 * 6 + 1 * 3 + 2
    assert np.array_equal(t.values, np.arange(24))
    with pytest.raises(ShapeError):
        Tensor3.from_dims(np.arange(5), (2, 3, 1))


def test_invalid_tensors_rejected():
    with pytest.raises(ShapeError):
        Tensor3(np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        Tensor3(np.zeros((0, 2, 2)))
    with pytest.raises(ValueError):
        Tensor3(np.array([[[np.nan]]]))


def test_tensor_is_immutable():
    t = Tensor3(np.zeros((1, 2, 2)))
    with pytest.raises(ValueError):
        t.data[0, 0, 0] = 1.0


def test_mode2_product_examples():
    t = Tensor3(np.array([[[3.0, 4.0]]]))
    assert mode2_product(t, np.ones((1, 2))).data.tolist() == [[[7.0]]]
    assert not mode2_product(t, np.zeros((3, 2))).data.any()
    with pytest.raises(ShapeError):
        mode2_product(t, np.ones((1, 3)))


def test_slice_and_stack():
    m = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(slice_(stack([m]), 0), m)
    with pytest.raises(IndexError):
        slice_(stack([m]), 1)
    with pytest.raises(ShapeError):
        stack([m, np.zeros((3, 2))])
    with pytest.raises(ShapeError):
        stack([])


def test_concat_keeps_source_first():
    a, b = Tensor3(np.zeros((2, 1, 3))), Tensor3(np.ones((1, 1, 3)))
    c = concat(a, b)
    assert c.dims == (1, 3, 3)
    assert c.data[:2].sum() == 0 and c.data[2].sum() == 3
    with pytest.raises(ShapeError):
        concat(a, Tensor3(np.ones((1, 2, 3))))


def test_paper_scale_stack_dims():
    # 1,600 source plus 800 target images of 7 x 10,568 (shape only, zero-copy views)
    src = np.broadcast_to(np.zeros((1, 7, 1)), (1600, 7, 1))
    tgt = np.broadcast_to(np.zeros((1, 7, 1)), (800, 7, 1))
    joined = concat(Tensor3(src), Tensor3(tgt))
    assert (joined.i1, joined.i3) == (7, 2400)
    assert stack([np.zeros((7, 10568))]).dims == (7, 10568, 1)


@given(tensors())
def test_fold_unfold_identity(t):
    m = unfold_mode2(t)
    assert m.shape == (t.i2, t.i1 * t.i3)
    assert fold_mode2(m, t.dims) == t


@given(tensors())
def test_identity_product(t):
    assert mode2_product(t, np.eye(t.i2)) == t


@given(tensors(), st.floats(-2, 2), st.floats(-2, 2), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_product_linearity(t, alpha, beta, rows, seed):
    rng = np.random.default_rng(seed)
    b1, b2 = rng.uniform(-1, 1, (rows, t.i2)), rng.uniform(-1, 1, (rows, t.i2))
    lhs = mode2_product(t, alpha * b1 + beta * b2).data
    rhs = alpha * mode2_product(t, b1).data + beta * mode2_product(t, b2).data
    assert np.max(np.abs(lhs - rhs), initial=0.0) <= 1e-12
