"""Matrix-exponential oracle for the iterated damping integrals.

The integrals satisfy I^0_j(t) = 1 and

    I^ell_j(t) = integral_0^t  beta j e^{-beta j (t-s)} I^{ell-1}_{j+1}(s) ds,

which identifies I^ell_j(t) with the probability that a sum of independent
exponential waiting times with rates beta*j, beta*(j+1), ..., beta*(j+ell-1)
is at most t.  That probability is the absorption entry of the matrix
exponential of the sequential-phase generator, computed here with
scipy.linalg.expm -- no partial fractions, no recurrences shared with the
package implementation.  The unit tests freeze the printed values.

Run:  python3 tests/oracles/damping_integral_expm.py
"""
import numpy as np
from scipy.linalg import expm


def damping_integral_expm(ell: int, j: int, beta: float, t: float) -> float:
    """I^ell_j(t) as an absorption probability via the matrix exponential."""
    if ell == 0:
        return 1.0
    q = np.zeros((ell + 1, ell + 1))
    for m in range(ell):
        rate = beta * (j + m)
        q[m, m] = -rate
        q[m, m + 1] = rate
    return float(expm(q * t)[0, -1])


def main():
    print("(ell, j, beta, t) -> I")
    for ell, j, beta, t in [
        (1, 1, 1.0, 1.0),
        (2, 1, 1.0, 1.0),
        (3, 2, 1.0, 0.5),
        (5, 1, 2.0, 0.7),
        (8, 4, 1.0, 1.0),
        (16, 1, 1.0, 3.0),
        (32, 4, 1.0, 0.1),
        (64, 16, 1.0, 3.0),
    ]:
        val = damping_integral_expm(ell, j, beta, t)
        print(f"  ({ell:2d}, {j:2d}, {beta}, {t}) -> {val:.16e}")


if __name__ == "__main__":
    main()
