"""Cell-problem solver: closed-form benchmark, exact identities, curve shapes.

The heavy multi-resolution comparisons live in the acceptance suite; these
tests pin the same behaviors at small grids where a failure is cheap to
localize.
"""

import numpy as np
import pytest

from eddylab.cell import (effective_conductivity, scaling_invariance_check,
                          solve_cell, translation_sensitivity,
                          two_scale_compare, v_curve, v_inverse)
from eddylab.errors import ConfigurationError
from eddylab.fields import (as_view, cellular_eddy, implosive_eddy,
                            shear_eddy, zero_eddy)
from eddylab.tensors import SPDTensor, identity, quad_ratio_interval


def test_shear_flow_matches_taylor_dispersion():
    kappa = 1.0
    eff = effective_conductivity(identity(kappa), shear_eddy(128), 128, 1e-9)
    s = eff.sigma_sym
    assert s.a11 == pytest.approx(kappa + 1.0 / (2.0 * kappa), rel=1e-3)
    assert s.a22 == pytest.approx(kappa, rel=1e-6)
    assert abs(s.a12) < 1e-6
    assert eff.meta.converged


def test_zero_eddy_returns_molecular_tensor_exactly():
    a = SPDTensor(1.5, 0.3, 0.7)
    eff = effective_conductivity(a, zero_eddy(), 64, 1e-9)
    assert (eff.sigma_sym.a11, eff.sigma_sym.a12, eff.sigma_sym.a22) == \
        (a.a11, a.a12, a.a22)


def test_corrector_pinned_at_first_node():
    sol = solve_cell(identity(1.0), cellular_eddy(64), 64, 1e-9)
    assert sol.chi1.flat[0] == 0.0
    assert sol.chi2.flat[0] == 0.0
    assert sol.residual <= 1e-9


def test_solver_rejects_bad_resolution_and_tolerance():
    with pytest.raises(ConfigurationError):
        solve_cell(identity(1.0), cellular_eddy(64), 63, 1e-9)
    with pytest.raises(ConfigurationError):
        solve_cell(identity(1.0), cellular_eddy(64), 64, 0.0)


def test_rate_homogeneity_identity():
    # sigma_sym(B, gamma K) = gamma * sigma_sym(B / gamma, K)
    gamma = 2.0
    b = SPDTensor(1.2, 0.2, 0.9)
    e = cellular_eddy(64)
    left = effective_conductivity(b, as_view(e).scaled_by_coeff(gamma), 128, 1e-11)
    right = effective_conductivity(b.scaled(1.0 / gamma), e, 128, 1e-11)
    for got, want in ((left.sigma_sym.a11, gamma * right.sigma_sym.a11),
                      (left.sigma_sym.a12, gamma * right.sigma_sym.a12),
                      (left.sigma_sym.a22, gamma * right.sigma_sym.a22)):
        assert got == pytest.approx(want, rel=1e-6, abs=1e-9)


def test_conductivity_sandwich_anisotropic():
    a = SPDTensor(1.5, 0.3, 0.7)
    e = cellular_eddy(128)
    eff = effective_conductivity(a, e, 128, 1e-9)
    lo, _ = quad_ratio_interval(eff.sigma_sym, a)
    assert lo >= 1.0 - 1e-8
    # in 2D the enhancement bound collapses to a multiple of a itself
    h2 = float(np.mean(cellular_eddy(128).grid ** 2))
    upper = a.scaled(1.0 + h2 / a.det())
    lo_up, _ = quad_ratio_interval(upper, eff.sigma_sym)
    assert lo_up >= 1.0 - 1e-8


def test_scaling_invariance_exact_on_aligned_grids():
    rep = scaling_invariance_check(identity(1.0), cellular_eddy(64), 2,
                                   n_base=128, tol=1e-9)
    assert rep.n_scaled == 256
    assert rep.max_rel_deviation <= 1e-10


def test_scaling_check_rejects_fractional_factor():
    with pytest.raises(ConfigurationError):
        scaling_invariance_check(identity(1.0), cellular_eddy(64), 1.5)


def test_v_curve_shape_and_inverse():
    curve = v_curve(cellular_eddy(64), [2.0, 1.0, 0.5], n=64, tol=1e-9, max_n=128)
    vs = [p.v for p in curve.points]
    ws = [p.w for p in curve.points]
    assert all(v >= 1.0 for v in vs)
    assert all(w >= v - 1e-12 for v, w in zip(vs, ws))
    # zeta list is descending, so enhancement factors ascend
    assert vs[0] <= vs[1] <= vs[2]
    assert curve.monotone_v and curve.monotone_w
    mid_v = vs[1]
    zeta0 = v_inverse(curve, mid_v)
    assert zeta0 == pytest.approx(1.0, rel=1e-6)


def test_v_curve_rejects_bad_zetas():
    with pytest.raises(ConfigurationError):
        v_curve(cellular_eddy(64), [], n=64)
    with pytest.raises(ConfigurationError):
        v_curve(cellular_eddy(64), [1.0, -0.5], n=64)


def test_two_scale_ratio_near_one_for_separated_scales():
    rep = two_scale_compare(identity(0.5), cellular_eddy(64), cellular_eddy(64),
                            4, n_base=128, tol=1e-9)
    assert rep.r == 4
    assert rep.ratio_lo <= 1.0 + 1e-12
    assert rep.deviation < 0.05
    assert rep.n_direct >= 128


def test_sensitivity_zero_shift_coincides_exactly():
    rep = translation_sensitivity([0.8, 0.4], cellular_eddy(64), cellular_eddy(64),
                                  2, (0.0, 0.0), n_base=64, tol=1e-9, max_n=128)
    for row in rep.rows:
        assert row.lambda_base == row.lambda_shifted


def test_sensitivity_null_case_same_slopes():
    # same pattern at both scales: a shift changes values, not the scaling law
    rep = translation_sensitivity([0.8, 0.4, 0.2], cellular_eddy(64),
                                  cellular_eddy(64), 2, (0.37, 0.11),
                                  n_base=64, tol=1e-9, max_n=256)
    assert 0.0 < rep.slope_base <= 1.0
    assert 0.0 < rep.slope_shifted <= 1.0
    assert abs(rep.slope_base - rep.slope_shifted) < 0.05


def test_sensitivity_blocked_vs_connected_supports():
    # compact eddies whose supports only touch across cells after the half-cell
    # shift: the connected arrangement keeps the fast-transport network alive
    # at small zeta, the blocked one decays with a visibly steeper exponent
    rep = translation_sensitivity([0.8, 0.4, 0.2], implosive_eddy(128),
                                  implosive_eddy(128), 2, (0.5, 0.5),
                                  n_base=128, tol=1e-9, max_n=1024)
    assert all(row.converged for row in rep.rows)
    assert rep.slope_base > rep.slope_shifted + 0.08
    assert rep.slope_shifted == pytest.approx(0.5, abs=0.15)
