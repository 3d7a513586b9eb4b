from fractions import Fraction

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from polystab.calabiflow import (
    FlowConfig,
    coercivity_constant,
    curvature_residual,
    discrete_extremal,
    guillemin_second_derivative,
    init_potential,
    mabuchi_relative,
    run_flow,
    scalar_curvature,
    step,
)
from polystab.errors import DegreeUnsupported, NonConvexStart, StepRejected, ZeroWeightEndpoint
from polystab.functionals import extremal_affine
from polystab.geometry import interval

X = sympy.symbols("x")


def _symbolic_curvature(a, b):
    u = X * sympy.log(X) / a + (1 - X) * sympy.log(1 - X) / b
    S = sympy.simplify(-sympy.diff(1 / sympy.diff(u, X, 2), X, 2))
    return sympy.lambdify(X, S), u


def test_guillemin_model_matches_symbolic_second_derivative():
    a, b = sympy.Rational(1, 2), sympy.Integer(1)
    _, u = _symbolic_curvature(a, b)
    upp = sympy.lambdify(X, sympy.diff(u, X, 2))
    x = np.linspace(0.05, 0.95, 19)
    assert np.allclose(guillemin_second_derivative(x, 0, 1, (0.5, 1.0)), upp(x), rtol=1e-13)
    # 1/u'' vanishes at 0 with slope equal to the weight
    psi = sympy.series(1 / sympy.diff(u, X, 2), X, 0, 2).removeO()
    assert sympy.simplify(psi - X / 2) == 0


def test_p1_guillemin_curvature_is_two():
    state = init_potential(interval(0, 1, (1, 1)), resolution=256)
    assert np.allclose(scalar_curvature(state), 2.0, atol=1e-9)
    assert curvature_residual(state) <= 5e-4


def test_weighted_curvature_converges():
    a, b = sympy.Rational(1, 2), sympy.Integer(1)
    exact, _ = _symbolic_curvature(a, b)
    mp = interval(0, 1, (Fraction(1, 2), 1))
    inner, ends = [], []
    for N in (32, 64, 128):
        s = init_potential(mp, resolution=N)
        err = scalar_curvature(s) - exact(s.nodes)
        inner.append(np.max(np.abs(err[3:-3])))
        ends.append(np.max(np.abs(err[[0, -1]])))
    # second order away from the endpoints, first order at them
    assert inner[0] / inner[1] > 3.2 and inner[1] / inner[2] > 3.2
    assert ends[0] / ends[1] > 1.8 and ends[1] / ends[2] > 1.8


def test_residual_against_own_curvature_is_zero():
    s = init_potential(interval(0, 1, (1, 1)), lambda x: 0.3 * x**3, resolution=32)
    assert curvature_residual(s, scalar_curvature(s)) == 0


def test_init_errors():
    with pytest.raises(ZeroWeightEndpoint):
        init_potential(interval(0, 1, (0, 1)))
    with pytest.raises(NonConvexStart):
        init_potential(interval(0, 1, (1, 1)), lambda x: -50 * x**2, resolution=16)
    with pytest.raises(NonConvexStart), np.errstate(invalid="ignore"):
        init_potential(interval(0, 1, (1, 1)), lambda x: np.log(x - 2), resolution=16)


def test_flow_needs_an_interval(square):
    with pytest.raises(DegreeUnsupported):
        init_potential(square)


def test_mabuchi_reference_values():
    mp = interval(0, 1, (1, 1))
    base = init_potential(mp, resolution=64)
    assert mabuchi_relative(base) == 0
    for eps in (0.1, -0.1):
        s = init_potential(mp, lambda x: eps * x * (1 - x), resolution=64)
        assert mabuchi_relative(s, reference=base) > 0


def test_discrete_extremal_close_to_exact():
    mp = interval(0, 1, (Fraction(1, 2), 1))
    s = init_potential(mp, resolution=128)
    A = extremal_affine(mp)
    B = discrete_extremal(s.mesh)
    assert B.gradient[0] == pytest.approx(float(A.gradient[0]), abs=1e-3)
    assert B.constant == pytest.approx(float(A.constant), abs=1e-3)


def test_explicit_step_rejects_large_dt():
    s = init_potential(interval(0, 1, (1, 1)), lambda x: 0.5 * x * (1 - x), resolution=32)
    with pytest.raises(StepRejected) as info:
        step(s, 1e-2, "explicit")
    assert info.value.suggested_dt == pytest.approx(5e-3)


def test_implicit_step_is_a_contraction_towards_affine_targets():
    s = init_potential(interval(0, 1, (1, 1)), lambda x: 0.5 * x * (1 - x), resolution=32)
    new = step(s, 1e-3)
    assert curvature_residual(new) < curvature_residual(s)
    assert new.time == pytest.approx(1e-3)
    # gauge keeps v orthogonal to affine functions
    assert np.allclose(new.mesh.affine_projection(new.v), 0, atol=1e-12)


def test_p1_flow_decreases_energy_and_mabuchi():
    s = init_potential(interval(0, 1, (1, 1)), lambda x: 0.5 * x * (1 - x), resolution=32)
    diag, final = run_flow(s, 0.5, config=FlowConfig(target_tol=1e-6))
    e = diag.column("calabi_energy")
    f = diag.column("F_Shat")
    assert np.all(np.diff(e) <= 1e-10)
    assert np.all(np.diff(f) <= 1e-10)
    assert e[-1] < 1e-3 * e[0]
    assert diag.coercivity > 0
    assert diag.to_csv().splitlines()[0].startswith("t,calabi_energy")


def test_coercivity_of_guillemin_potential():
    s = init_potential(interval(0, 1, (1, 1)), resolution=64)
    lam = coercivity_constant(s)
    assert 0.25 < lam < np.inf


@settings(max_examples=6, deadline=None)
@given(st.floats(0.2, 1.0), st.floats(-0.8, 0.8))
def test_flow_monotone_for_any_weights(w0, eps):
    mp = interval(0, 1, (Fraction(w0).limit_denominator(100), 1))
    s = init_potential(mp, lambda x: eps * x * (1 - x), resolution=24)
    diag, _ = run_flow(s, 0.2)
    r = diag.column("target_residual")
    assert np.all(np.diff(r) <= 1e-10 * max(1.0, r[0]))
