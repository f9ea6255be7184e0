"""Damping integrals, their decay bounds, and the hierarchy cascade.

Reference values are frozen from tests/oracles/damping_integral_expm.py,
which evaluates the integrals as absorption probabilities of a sequential
phase chain via scipy.linalg.expm -- a mechanism fully independent of the
partial-fraction evaluator under test.
"""
import math

import numpy as np
import pytest

from pchaos.bounds import (
    BoundCascade,
    cascade_bound,
    eval_I,
    eval_I_many,
    eval_I_table,
    exp_bound,
    exp_bound_applies,
    integrate_hierarchy,
    poly_bound,
    recurrence_residual,
    recurrence_residual_sweep,
)

# frozen from tests/oracles/damping_integral_expm.py; the last entry sits at
# 1e-29 where the double-precision oracle itself keeps only ~8 digits
EXPM_ORACLE = [
    (1, 1, 1.0, 1.0, 6.3212055882855767e-01, 1e-12),
    (2, 1, 1.0, 1.0, 3.9957640089372837e-01, 1e-12),
    (3, 2, 1.0, 0.5, 1.7175878444894602e-01, 1e-12),
    (5, 1, 2.0, 0.7, 2.4273747495623033e-01, 1e-12),
    (8, 4, 1.0, 1.0, 3.7701132693315548e-01, 1e-12),
    (16, 1, 1.0, 3.0, 4.4170771448880131e-01, 1e-12),
    (32, 4, 1.0, 0.1, 1.0016093102815284e-29, 1e-6),
    (64, 16, 1.0, 3.0, 9.9999847786905982e-01, 1e-12),
]


def test_against_matrix_exponential_oracle():
    for ell, j, beta, t, want, rel in EXPM_ORACLE:
        got = eval_I(ell, j, beta, t)
        assert got == pytest.approx(want, rel=rel)


def test_order_one_closed_form():
    for j in (1, 2, 7, 16):
        for beta in (0.5, 1.0, 4.0):
            for t in (0.0, 0.1, 1.0, 3.0):
                want = 1.0 - math.exp(-beta * j * t)
                assert eval_I(1, j, beta, t) == pytest.approx(want, abs=1e-12)


def test_order_two_closed_form_at_j_one():
    # two phases at rates beta and 2*beta: the maximum of two unit-rate clocks
    for beta in (0.5, 1.0, 2.0):
        for t in (0.2, 1.0, 2.5):
            want = (1.0 - math.exp(-beta * t)) ** 2
            assert eval_I(2, 1, beta, t) == pytest.approx(want, rel=1e-12)


def test_degenerate_and_extreme_arguments():
    assert eval_I(0, 3, 1.0, 0.5) == 1.0
    assert eval_I(4, 3, 1.0, 0.0) == 0.0
    assert eval_I(2, 1, 1.0, 50.0) == pytest.approx(1.0, abs=1e-12)


def test_values_are_probabilities_and_monotone():
    ts = np.array([0.1, 0.5, 1.0, 2.0, 3.0])
    prev = None
    for ell in (1, 2, 4, 8, 16, 32):
        vals = eval_I_many(ell, 2, 1.0, ts)
        assert np.all((0.0 <= vals) & (vals <= 1.0))
        assert np.all(np.diff(vals) >= -1e-15)          # increasing in t
        if prev is not None:
            assert np.all(vals <= prev + 1e-15)         # decreasing in ell
        prev = vals
    # larger j means faster clocks, so larger probability
    assert eval_I(8, 1, 1.0, 1.0) < eval_I(8, 4, 1.0, 1.0) < eval_I(8, 16, 1.0, 1.0)


def test_table_matches_single_evaluations():
    ts = [0.1, 1.0, 3.0]
    table = eval_I_table(3, 20, 1.0, ts)
    assert table.shape == (21, 3)
    for ell in (0, 1, 7, 20):
        want = eval_I_many(ell, 3, 1.0, ts)
        assert np.allclose(table[ell], want, rtol=1e-11, atol=1e-14)


def test_argument_validation():
    with pytest.raises(ValueError, match="nonnegative"):
        eval_I(-1, 1, 1.0, 1.0)
    with pytest.raises(ValueError, match="at least 1"):
        eval_I(1, 0, 1.0, 1.0)
    with pytest.raises(ValueError, match="beta"):
        eval_I(1, 1, 0.0, 1.0)
    with pytest.raises(ValueError, match="time"):
        eval_I(1, 1, 1.0, -0.5)
    with pytest.raises(ValueError, match="recurrence"):
        recurrence_residual(0, 1, 1.0, 1.0)


def test_recurrence_residual_small():
    for ell, j, t in ((1, 1, 1.0), (4, 2, 0.5), (16, 1, 3.0), (8, 16, 0.1)):
        assert recurrence_residual(ell, j, 1.0, t) < 1e-10


def test_residual_sweep_matches_scalar_residual():
    sweep = recurrence_residual_sweep(12, 2, 1.0, 0.8, order=32)
    assert sweep.shape == (12,)
    for ell in (1, 5, 12):
        scalar = recurrence_residual(ell, 2, 1.0, 0.8, order=32)
        assert sweep[ell - 1] == pytest.approx(scalar, abs=1e-13)
    assert np.max(sweep) < 1e-10


def test_poly_bound_dominates():
    for ell in (1, 4, 16, 64):
        for j in (1, 4):
            for b in (1, 3, 7):
                for t in (0.1, 1.0):
                    assert eval_I(ell, j, 1.0, t) <= poly_bound(ell, j, b, 1.0, t) * (1 + 1e-12)
    with pytest.raises(ValueError, match="positive integer"):
        poly_bound(1, 1, 0, 1.0, 1.0)


def test_exp_bound_hypothesis_and_domination():
    # hypothesis j <= (1/3) e^{-2 beta t - 1} ell, checked on both sides of the line
    ell, beta, t = 60, 1.0, 0.1
    cutoff = math.exp(-2 * beta * t - 1) * ell / 3.0
    for j in (1, 2, 4):
        applies = exp_bound_applies(ell, j, beta, t)
        assert applies == (j <= cutoff)
        b = exp_bound(ell, j, beta, t)
        if applies:
            assert b is not None and eval_I(ell, j, beta, t) <= b * (1 + 1e-12)
        else:
            assert b is None
    # far outside the hypothesis nothing is claimed
    assert exp_bound(2, 16, 1.0, 3.0) is None


def test_cascade_data_validation():
    with pytest.raises(ValueError, match="j >= 1"):
        BoundCascade(0, 1, 1.0, (1.0,), (0.0,), 1.0)
    with pytest.raises(ValueError, match="beta"):
        BoundCascade(1, 1, 0.0, (1.0,), (0.0,), 1.0)
    with pytest.raises(ValueError, match="cover"):
        BoundCascade(1, 3, 1.0, (1.0,), (0.0,), 1.0)
    with pytest.raises(ValueError, match="at least 1"):
        BoundCascade(1, 1, 1.0, (0.9,), (0.0,), 1.0)
    with pytest.raises(ValueError, match="nonnegative"):
        BoundCascade(1, 1, 1.0, (1.0,), (-0.1,), 1.0)
    with pytest.raises(ValueError, match="t0"):
        BoundCascade(1, 1, 1.0, (1.0,), (0.0,), 1.0, t0=2.0)


def test_prefactor_product():
    alpha = (1.5, 1.25, 1.1, 1.0)
    bc = BoundCascade(2, 4, 1.0, alpha, (0.0,) * 4, 1.0)
    assert bc.A(0) == 1.0
    for k in (1, 2, 3, 4):
        assert bc.A(k) == pytest.approx(np.prod(alpha[:k]), rel=1e-15)
    with pytest.raises(ValueError, match="alpha entries"):
        bc.log_A(5)


def test_unit_alpha_cascade_is_exact():
    # with alpha = 1 the closed-form bound solves the equality hierarchy
    # exactly: the leading term is the phase-chain probability and each
    # residue term is its Duhamel integral; the stiff integrator must agree
    for j, ell, t in ((1, 4, 0.8), (2, 6, 1.5), (4, 3, 0.3)):
        r = tuple(0.7 ** k for k in range(ell))
        bc = BoundCascade(j, ell, 1.0, (1.0,) * ell, r, t)
        sup = 0.6
        _, vals = integrate_hierarchy(bc, sup, n_out=3)
        assert vals[0][-1] == pytest.approx(cascade_bound(bc, sup), rel=1e-8)


def test_cascade_bound_dominates_ode_with_growth_factors():
    for j, ell, t in ((1, 8, 1.0), (4, 12, 0.5)):
        ks = range(j, j + ell)
        alpha = tuple(1.0 + k * k / 1e4 for k in ks)
        r = tuple(math.exp(-k / 8.0) for k in ks)
        bc = BoundCascade(j, ell, 1.0, alpha, r, t, t0=t / 3.0)
        _, vals = integrate_hierarchy(bc, 1.0, n_out=5, rtol=1e-9, atol=1e-13)
        xj = vals[0][-1]
        plain = cascade_bound(BoundCascade(j, ell, 1.0, alpha, r, t), 1.0)
        split = cascade_bound(bc, 1.0, 1.0)
        assert xj <= plain * (1 + 1e-6)
        assert xj <= split * (1 + 1e-6)


def test_cascade_bound_split_needs_early_sup():
    bc = BoundCascade(1, 2, 1.0, (1.0, 1.0), (0.0, 0.0), 1.0, t0=0.5)
    with pytest.raises(ValueError, match="split form needs"):
        cascade_bound(bc, 1.0)
    with pytest.raises(ValueError, match="nonnegative"):
        cascade_bound(bc, -1.0, 1.0)


def test_integrate_hierarchy_validation_and_trajectory_shape():
    bc = BoundCascade(2, 3, 1.0, (1.0, 1.0, 1.0), (0.0, 0.0, 0.0), 1.0)
    times, vals = integrate_hierarchy(bc, 1.0, n_out=7)
    assert times.shape == (7,) and vals.shape == (3, 7)
    assert np.all(vals[:, 0] == 0.0)
    assert np.all(np.diff(vals[0]) >= -1e-12)
    with pytest.raises(ValueError, match="k_max"):
        integrate_hierarchy(bc, 1.0, k_max=1)
    with pytest.raises(ValueError, match="closure"):
        integrate_hierarchy(bc, -0.5)
