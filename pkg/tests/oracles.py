"""Reference computations that share no code with the package."""

import mpmath
import numpy as np

mpmath.mp.dps = 40
INV_PHI = (mpmath.sqrt(5) - 1) / 2


def golden_section_min(phi, lo, hi, rel=1e-13, max_iter=400):
    """Minimize a unimodal ``phi`` on ``[lo, hi]`` in mpmath arithmetic."""
    lo, hi = mpmath.mpf(lo), mpmath.mpf(hi)
    c = hi - INV_PHI * (hi - lo)
    d = lo + INV_PHI * (hi - lo)
    fc, fd = phi(c), phi(d)
    for _ in range(max_iter):
        if hi - lo <= rel * abs(hi + lo) / 2:
            break
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - INV_PHI * (hi - lo)
            fc = phi(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + INV_PHI * (hi - lo)
            fd = phi(d)
    return (lo + hi) / 2


def mp_dot(a, b):
    return mpmath.fsum(mpmath.mpf(float(x)) * mpmath.mpf(float(y)) for x, y in zip(a, b))


def bracket(phi, start):
    """Grow ``[0, hi]`` until ``phi`` turns upward past its minimizer."""
    hi = mpmath.mpf(start)
    while phi(2 * hi) < phi(hi) or phi(hi) < phi(0):
        hi *= 2
    return 2 * hi


def tau_by_search(g, S_hat, H):
    """argmin over tau of ||tau S_hat^-1 g - H^-1 g||_H^2, by 1-D search.

    Expanded: tau^2 <H s, s> - 2 tau <s, g> + const, with s = S_hat^-1 g.
    """
    s = np.linalg.solve(S_hat, g)
    a = mp_dot(H @ s, s)
    b = mp_dot(s, g)

    def phi(t):
        return t * t * a - 2 * t * b

    return float(golden_section_min(phi, 0, bracket(phi, 1e-6)))


def omega_by_search(A, f, r):
    """argmin over omega of ||A^-1 f - omega r||_A^2 for symmetric A, by 1-D search."""
    a = mp_dot(A @ r, r)
    b = mp_dot(f, r)

    def phi(w):
        return w * w * a - 2 * w * b

    return float(golden_section_min(phi, 0, bracket(phi, 1e-6)))


def h_norm(H, v):
    return float(np.sqrt(v @ H @ v))
