"""Damping integrals I^l_j, their closed bounds, and the hierarchy cascade.

The integrals are defined by I^0_j = 1 and the carry recurrence

    I^{l+1}_j(t) = beta * j * exp(-beta*j*t) * int_0^t exp(beta*j*s) I^l_{j+1}(s) ds,

so I^l_j is exactly the probability that a sum of independent exponential
waiting times with rates beta*j, beta*(j+1), ..., beta*(j+l-1) is at most t:
each application of the recurrence convolves one more waiting time onto the
front of the chain, and I^1_j = 1 - e^{-beta j t} is the base case.  Since
the rates are distinct, the partial-fraction form

    I^l_j(t) = 1 - sum_{m=j}^{j+l-1} e^{-beta*m*t} prod_{n != m} n / (n - m)

is exact.  The products are binomial-sized with alternating signs, so the sum
is evaluated in adaptive multiple precision and rounded once at the end; the
recurrence itself is exercised separately by a quadrature residual check.
Everything downstream (the polynomial and exponential decay bounds, the
cascade bound for hierarchies of differential inequalities, and the direct
ODE integration used to cross-check it) is plain float arithmetic on top of
that evaluator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import mpmath as mp
import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import solve_ivp

__all__ = [
    "eval_I",
    "eval_I_many",
    "eval_I_table",
    "recurrence_residual",
    "recurrence_residual_sweep",
    "poly_bound",
    "exp_bound_applies",
    "exp_bound",
    "BoundCascade",
    "cascade_bound",
    "integrate_hierarchy",
]

_DPS_START = 60
_DPS_LIMIT = 4000


def _check_args(ell: int, j: int, beta: float, t: float) -> None:
    if ell < 0:
        raise ValueError("order ell must be nonnegative")
    if j < 1:
        raise ValueError("index j must be at least 1")
    if beta <= 0:
        raise ValueError("beta must be positive")
    if t < 0:
        raise ValueError("time must be nonnegative")


@lru_cache(maxsize=None)
def _fraction_coeffs(j: int, ell: int, dps: int):
    """Partial-fraction coefficients c_m = prod_{n != m} n/(n-m), m = j..j+ell-1."""
    with mp.workdps(dps):
        out = []
        for m in range(j, j + ell):
            c = mp.mpf(1)
            for n in range(j, j + ell):
                if n != m:
                    c *= mp.mpf(n) / (n - m)
            out.append(c)
        return tuple(out)


def _eval_mp(ell: int, j: int, beta, ts, dps: int):
    """I^ell_j at each time in ts, as mpf values at working precision dps."""
    coeffs = _fraction_coeffs(j, ell, dps)
    with mp.workdps(dps):
        b = mp.mpf(beta)
        vals = []
        for t in ts:
            acc = mp.mpf(1)
            tt = mp.mpf(t)
            for m, c in zip(range(j, j + ell), coeffs):
                acc -= c * mp.e ** (-b * m * tt)
            vals.append(acc)
        return vals


def eval_I_many(ell: int, j: int, beta: float, ts, rel_tol: float = 1e-12) -> np.ndarray:
    """I^ell_j at every time in ts, certified by doubling the working precision.

    Precision doubles until two consecutive evaluations agree to rel_tol at
    every requested time (absolute tolerance for values near zero); failure to
    stabilize below the precision ceiling raises with the error achieved.
    """
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    _check_args(ell, j, beta, float(ts.min(initial=0.0)))
    if ell == 0:
        return np.ones_like(ts)
    dps = _DPS_START
    prev = _eval_mp(ell, j, beta, ts, dps)
    worst = math.inf
    while dps * 2 <= _DPS_LIMIT:
        dps *= 2
        cur = _eval_mp(ell, j, beta, ts, dps)
        with mp.workdps(dps):
            worst = max(
                float(abs(a - b) / max(abs(b), mp.mpf(1e-300))) for a, b in zip(prev, cur)
            )
            ok = worst <= rel_tol or all(
                abs(a - b) <= rel_tol for a, b in zip(prev, cur)
            )
        if ok:
            out = np.array([float(v) for v in cur])
            # the value is a probability; clip the last-digit rounding spill
            return np.clip(out, 0.0, 1.0)
        prev = cur
    raise ArithmeticError(
        f"I evaluation did not stabilize below {_DPS_LIMIT} digits "
        f"(ell={ell}, j={j}, beta={beta}; achieved agreement {worst:.3e})"
    )


def eval_I(ell: int, j: int, beta: float, t: float, rel_tol: float = 1e-12) -> float:
    """The damping integral I^ell_j(t) as a float."""
    return float(eval_I_many(ell, j, beta, [t], rel_tol)[0])


def _eval_table_mp(j: int, ell_max: int, beta, ts, dps: int):
    """Rows I^L_j(ts) for L = 0..ell_max, sharing one exponential table.

    All rows over one j reuse the same factors e^{-beta m t}, m = j..j+ell_max-1,
    so sweeping every order costs O(ell_max^2) multiplies per time instead of
    ell_max separate evaluations.
    """
    with mp.workdps(dps):
        b = mp.mpf(beta)
        exps = [
            [mp.e ** (-b * m * mp.mpf(t)) for t in ts] for m in range(j, j + ell_max)
        ]
        rows = [[mp.mpf(1)] * len(ts)]
        for L in range(1, ell_max + 1):
            coeffs = _fraction_coeffs(j, L, dps)
            row = []
            for it in range(len(ts)):
                acc = mp.mpf(1)
                for mi, c in enumerate(coeffs):
                    acc -= c * exps[mi][it]
                row.append(acc)
            rows.append(row)
        return rows


def eval_I_table(
    j: int, ell_max: int, beta: float, ts, rel_tol: float = 1e-12
) -> np.ndarray:
    """I^L_j at every time in ts for every order L = 0..ell_max at once.

    Returns an (ell_max+1, len(ts)) array with the same certification loop as
    eval_I_many: the working precision doubles until two consecutive sweeps
    agree entrywise.
    """
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    _check_args(ell_max, j, beta, float(ts.min(initial=0.0)))
    if ell_max == 0:
        return np.ones((1, ts.size))
    dps = _DPS_START
    prev = _eval_table_mp(j, ell_max, beta, ts, dps)
    worst = math.inf
    while dps * 2 <= _DPS_LIMIT:
        dps *= 2
        cur = _eval_table_mp(j, ell_max, beta, ts, dps)
        with mp.workdps(dps):
            worst = 0.0
            ok = True
            for ra, rb in zip(prev, cur):
                for a, b in zip(ra, rb):
                    d = abs(a - b)
                    worst = max(worst, float(d / max(abs(b), mp.mpf(1e-300))))
                    if d > rel_tol and d / max(abs(b), mp.mpf(1e-300)) > rel_tol:
                        ok = False
        if ok:
            out = np.array([[float(v) for v in row] for row in cur])
            return np.clip(out, 0.0, 1.0)
        prev = cur
    raise ArithmeticError(
        f"I table did not stabilize below {_DPS_LIMIT} digits "
        f"(ell_max={ell_max}, j={j}, beta={beta}; achieved agreement {worst:.3e})"
    )


def recurrence_residual(ell: int, j: int, beta: float, t: float, order: int = 64) -> float:
    """|I^ell_j(t) - beta j int_0^t e^{-beta j (t-s)} I^{ell-1}_{j+1}(s) ds|.

    The integral is done by Gauss-Legendre panels sized so the exponential
    factor varies by at most e^2 per panel; the integrand values come from the
    certified evaluator, so this measures how well the returned values satisfy
    the defining recurrence.
    """
    if ell < 1:
        raise ValueError("the recurrence starts at ell = 1")
    _check_args(ell, j, beta, t)
    if t == 0:
        return float(eval_I(ell, j, beta, 0.0))
    ss, ww = _panel_nodes(j, beta, t, order)
    inner = eval_I_many(ell - 1, j + 1, beta, ss)
    integral = float(np.sum(ww * np.exp(-beta * j * (t - ss)) * inner))
    return abs(eval_I(ell, j, beta, t) - beta * j * integral)


def _panel_nodes(j: int, beta: float, t: float, order: int):
    """Gauss-Legendre nodes/weights on [0, t], panels sized to the damping rate."""
    panels = max(1, math.ceil(beta * j * t / 2.0))
    nodes, weights = leggauss(order)
    edges = np.linspace(0.0, t, panels + 1)
    ss, ww = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        ss.append(0.5 * (b - a) * nodes + 0.5 * (a + b))
        ww.append(0.5 * (b - a) * weights)
    return np.concatenate(ss), np.concatenate(ww)


def recurrence_residual_sweep(
    ell_max: int, j: int, beta: float, t: float, order: int = 16
) -> np.ndarray:
    """Recurrence residuals for every ell = 1..ell_max at one (j, t).

    Same check as recurrence_residual, but all orders share the quadrature
    node set and the exponential tables, which makes certifying a whole
    lattice column cost barely more than its largest single entry.  Entry
    [ell-1] is the residual at order ell.
    """
    if ell_max < 1:
        raise ValueError("the recurrence starts at ell = 1")
    _check_args(ell_max, j, beta, t)
    outer = eval_I_table(j, ell_max, beta, [t])[:, 0]
    if t == 0:
        return np.abs(outer[1:])
    ss, ww = _panel_nodes(j, beta, t, order)
    inner = eval_I_table(j + 1, ell_max - 1, beta, ss)
    damp = ww * np.exp(-beta * j * (t - ss))
    integrals = inner @ damp
    return np.abs(outer[1:] - beta * j * integrals)


def poly_bound(ell: int, j: int, b: int, beta: float, t: float) -> float:
    """Polynomial-decay bound ((j+b)/(j+ell))^b * e^{beta b t} on I^ell_j(t)."""
    _check_args(ell, j, beta, t)
    if b != int(b) or b < 1:
        raise ValueError("exponent b must be a positive integer")
    return float(((j + b) / (j + ell)) ** b * math.exp(beta * b * t))


def exp_bound_applies(ell: int, j: int, beta: float, t: float) -> bool:
    """Hypothesis of the exponential bound: j <= (1/3) e^{-2 beta t - 1} ell."""
    _check_args(ell, j, beta, t)
    return j <= math.exp(-2.0 * beta * t - 1.0) * ell / 3.0


def exp_bound(ell: int, j: int, beta: float, t: float):
    """Stretched-exponential bound exp(-(1/3) e^{-2 beta t - 1} ell) on I^ell_j(t).

    Returns None when the hypothesis j <= (1/3) e^{-2 beta t - 1} ell fails,
    since the bound is simply not claimed there.
    """
    if not exp_bound_applies(ell, j, beta, t):
        return None
    return float(math.exp(-math.exp(-2.0 * beta * t - 1.0) * ell / 3.0))


# ---------------------------------------------------------------------------
# the cascade for hierarchies of differential inequalities


@dataclass(frozen=True)
class BoundCascade:
    """Data of the closed hierarchy  dx_k/dt <= beta k (alpha_k x_{k+1} - x_k) + r_k.

    alpha and r list the constants for k = j, j+1, ... (at least ell of them);
    the chain is closed ell levels up by a supremum on x_{j+ell}.  t is the
    evaluation time; a split time t0 separates an early window [0, t0] from
    the tail window [t0, t] in the two-supremum form of the bound.
    """

    j: int
    ell: int
    beta: float
    alpha: tuple
    r: tuple
    t: float
    t0: float | None = None

    def __post_init__(self):
        if self.j < 1 or self.ell < 1:
            raise ValueError("need j >= 1 and ell >= 1")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "r", tuple(float(x) for x in self.r))
        if len(self.alpha) < self.ell or len(self.r) < self.ell:
            raise ValueError("alpha and r must cover k = j .. j+ell-1")
        if any(a < 1.0 for a in self.alpha):
            raise ValueError("alpha entries must be at least 1")
        if any(x < 0 for x in self.r):
            raise ValueError("r entries must be nonnegative")
        if self.t < 0:
            raise ValueError("t must be nonnegative")
        if self.t0 is not None and not 0 <= self.t0 <= self.t:
            raise ValueError("need 0 <= t0 <= t")

    def log_A(self, k: int) -> float:
        """log of the prefactor A^k_j = alpha_j * ... * alpha_{j+k-1} (A^0_j = 1)."""
        if not 0 <= k <= len(self.alpha):
            raise ValueError("need 0 <= k <= number of alpha entries")
        return math.fsum(math.log(a) for a in self.alpha[:k])

    def A(self, k: int) -> float:
        return math.exp(self.log_A(k))


def cascade_bound(
    bc: BoundCascade, sup_tail: float, sup_tail_early: float | None = None
) -> float:
    """Closed-form bound on x_j(t) from the cascade data.

    Without a split time:
        A^l I^l_j(t) sup_tail
          + (1/beta) sum_{k<l} A^{k+1} I^{k+1}_j(t) r_{j+k} / (alpha_{j+k} (j+k)).

    With bc.t0 set, sup_tail bounds the tail on [t0, t] and sup_tail_early
    bounds it on [0, t0]; the leading term then decays in t - t0 and the early
    window enters through sum_k A^l I^k_{j+l-k}(t0) I^{l-k}_j(t-t0).
    """
    if sup_tail < 0:
        raise ValueError("sup_tail must be nonnegative")
    j, ell, beta, t = bc.j, bc.ell, bc.beta, bc.t
    rsum = 0.0
    for k in range(ell):
        rk = bc.r[k]
        if rk:
            rsum += math.exp(
                bc.log_A(k + 1) - math.log(bc.alpha[k])
            ) * eval_I(k + 1, j, beta, t) * rk / (j + k)
    rsum /= beta
    if bc.t0 is None:
        return bc.A(ell) * eval_I(ell, j, beta, t) * sup_tail + rsum
    if sup_tail_early is None:
        raise ValueError("the split form needs a bound for the tail on [0, t0]")
    if sup_tail_early < 0:
        raise ValueError("sup_tail_early must be nonnegative")
    head = bc.A(ell) * eval_I(ell, j, beta, t - bc.t0) * sup_tail
    early = 0.0
    for k in range(1, ell + 1):
        early += eval_I(k, j + ell - k, beta, bc.t0) * eval_I(ell - k, j, beta, t - bc.t0)
    early *= bc.A(ell) * sup_tail_early
    return head + early + rsum


def integrate_hierarchy(
    bc: BoundCascade,
    closure_value: float,
    k_max: int | None = None,
    n_out: int = 201,
    rtol: float = 1e-11,
    atol: float = 1e-14,
):
    """Integrate the closed hierarchy ODE system with equality signs.

    Solves dx_k/dt = beta k (alpha_k x_{k+1} - x_k) + r_k for k = j .. k_max
    with x_{k_max+1} pinned to the constant closure_value, x(0) = 0, by an
    implicit stiff integrator.  Returns (times, values) with values[m] the
    trajectory of x_{j+m} on n_out uniform output times.  For constant data
    this is the extremal trajectory of the differential inequalities, so
    cascade_bound on the same data dominates values[0] at time t.
    """
    j, beta = bc.j, bc.beta
    if k_max is None:
        k_max = bc.j + bc.ell - 1
    if k_max < j:
        raise ValueError("need k_max >= j")
    n_levels = k_max - j + 1
    if n_levels > len(bc.alpha):
        raise ValueError("alpha and r do not cover k = j .. k_max")
    if closure_value < 0:
        raise ValueError("closure_value must be nonnegative")
    ks = np.arange(j, k_max + 1, dtype=float)
    alpha = np.asarray(bc.alpha[:n_levels])
    r = np.asarray(bc.r[:n_levels])

    def rhs(_, y):
        upper = np.append(y[1:], closure_value)
        return beta * ks * (alpha * upper - y) + r

    def jac(_, y):
        m = np.diag(-beta * ks)
        for i in range(n_levels - 1):
            m[i, i + 1] = beta * ks[i] * alpha[i]
        return m

    times = np.linspace(0.0, bc.t, n_out)
    sol = solve_ivp(
        rhs, (0.0, bc.t), np.zeros(n_levels), method="Radau", jac=jac,
        t_eval=times, rtol=rtol, atol=atol,
    )
    if not sol.success:
        raise RuntimeError(f"hierarchy integration failed: {sol.message}")
    return times, sol.y
