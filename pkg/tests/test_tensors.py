import math

import numpy as np
import pytest

from eddylab.errors import TensorError
from eddylab.tensors import (SPDTensor, anisotropy, eigen_bounds, from_array,
                             identity, peclet, quad_ratio_interval)


def test_identity_scaling():
    t = identity(0.5)
    assert (t.a11, t.a12, t.a22) == (0.5, 0.0, 0.5)


def test_rejects_non_positive_diagonal():
    with pytest.raises(TensorError):
        SPDTensor(-1.0, 0.0, 1.0)
    with pytest.raises(TensorError):
        SPDTensor(0.0, 0.0, 1.0)


def test_rejects_indefinite():
    # determinant 1*1 - 4 < 0
    with pytest.raises(TensorError):
        SPDTensor(1.0, 2.0, 1.0)


def test_rejects_non_finite():
    with pytest.raises(TensorError):
        SPDTensor(math.nan, 0.0, 1.0)
    with pytest.raises(TensorError):
        SPDTensor(1.0, 0.0, math.inf)


def test_det_trace_quad():
    t = SPDTensor(2.0, 0.5, 1.0)
    assert t.det() == pytest.approx(2.0 * 1.0 - 0.25)
    assert t.trace() == 3.0
    # quad form against the explicit matrix product
    l = (0.3, -0.7)
    expected = np.array(l) @ t.as_array() @ np.array(l)
    assert t.quad(l) == pytest.approx(float(expected), rel=1e-15)


def test_from_array_symmetrizes():
    t = from_array([[2.0, 0.5], [0.5, 1.0]])
    assert (t.a11, t.a12, t.a22) == (2.0, 0.5, 1.0)


def test_eigen_bounds_match_numpy():
    t = SPDTensor(2.0, 0.7, 0.9)
    lo, hi = eigen_bounds(t)
    ref = np.linalg.eigvalsh(t.as_array())
    assert lo == pytest.approx(float(ref[0]), rel=1e-14)
    assert hi == pytest.approx(float(ref[1]), rel=1e-14)


def test_eigen_bounds_ill_conditioned_stays_positive():
    t = SPDTensor(1.0, 0.999999999, 1.0)
    lo, hi = eigen_bounds(t)
    assert 0.0 < lo < hi


def test_peclet_is_inverse():
    t = SPDTensor(2.0, 0.5, 1.5)
    p = peclet(t)
    prod = t.as_array() @ p.as_array()
    assert np.allclose(prod, np.eye(2), atol=1e-14)


def test_scaled_rejects_non_positive():
    with pytest.raises(TensorError):
        identity(1.0).scaled(0.0)


def test_anisotropy_one_iff_isotropic():
    assert anisotropy(identity(3.0)) == pytest.approx(1.0)
    assert anisotropy(SPDTensor(2.0, 0.0, 1.0)) == pytest.approx(2.0)


def test_quad_ratio_interval_orders_and_brackets():
    num = SPDTensor(2.0, 0.3, 1.0)
    den = SPDTensor(1.0, 0.0, 1.0)
    lo, hi = quad_ratio_interval(num, den)
    assert lo <= hi
    # against dense generalized eigenvalues
    ref = np.linalg.eigvalsh(num.as_array())
    assert lo == pytest.approx(float(ref[0]), rel=1e-6)
    assert hi == pytest.approx(float(ref[1]), rel=1e-6)


def test_quad_ratio_interval_identity_pair():
    t = SPDTensor(1.7, -0.2, 0.8)
    lo, hi = quad_ratio_interval(t, t)
    assert lo == pytest.approx(1.0, abs=1e-12)
    assert hi == pytest.approx(1.0, abs=1e-12)
