"""Independent reference computations used by the tests."""

import math

import numpy as np


def saddle_extragradient(grad_x, grad_y, x0, y0, step, tol=1e-14, max_iter=500_000):
    """Extragradient iterations for ``min_x max_y L(x, y)``.

    ``grad_x``/``grad_y`` are partial gradients of ``L``. Converges linearly
    for strongly convex-concave quadratics.
    """
    x, y = np.array(x0, dtype=float), np.array(y0, dtype=float)
    for _ in range(max_iter):
        xh = x - step * grad_x(x, y)
        yh = y + step * grad_y(x, y)
        xn = x - step * grad_x(xh, yh)
        yn = y + step * grad_y(xh, yh)
        delta = max(np.max(np.abs(xn - x)), np.max(np.abs(yn - y)))
        x, y = xn, yn
        if delta < tol:
            break
    return x, y


def bridge_saddle(b, c, y1, mu, gamma_phi, gamma_q):
    """Saddle point of the sample criterion written directly in the data:

    E_n[(b'x - y1) c'g - (c'g)^2 / 2 + mu (b'x)^2] - gamma_q |g|^2 + gamma_phi |x|^2
    """
    n = b.shape[0]

    def gx(x, g):
        return b.T @ (c @ g) / n + 2 * mu * b.T @ (b @ x) / n + 2 * gamma_phi * x

    def gg(x, g):
        return c.T @ (b @ x - y1) / n - c.T @ (c @ g) / n - 2 * gamma_q * g

    step = 0.5 / _lipschitz(b, c, mu, gamma_phi, gamma_q)
    x, _ = saddle_extragradient(gx, gg, np.zeros(b.shape[1]), np.zeros(c.shape[1]), step)
    return x


def xi_saddle(b, c, alpha, gamma_xi, gamma_q):
    """Saddle point of E_n[xi(Y) q(W) - q(W)^2 / 2 - alpha xi(Y)] - gamma_q |g|^2 + gamma_xi |x|^2."""
    n = b.shape[0]

    def gx(x, g):
        return b.T @ (c @ g) / n - b.T @ alpha / n + 2 * gamma_xi * x

    def gg(x, g):
        return c.T @ (b @ x) / n - c.T @ (c @ g) / n - 2 * gamma_q * g

    step = 0.5 / _lipschitz(b, c, 0.0, gamma_xi, gamma_q)
    x, _ = saddle_extragradient(gx, gg, np.zeros(b.shape[1]), np.zeros(c.shape[1]), step)
    return x


def _lipschitz(b, c, mu, gamma_phi, gamma_q):
    n = b.shape[0]
    p, q = b.shape[1], c.shape[1]
    H = np.zeros((p + q, p + q))
    H[:p, :p] = 2 * mu * b.T @ b / n + 2 * gamma_phi * np.eye(p)
    H[:p, p:] = b.T @ c / n
    H[p:, :p] = -c.T @ b / n
    H[p:, p:] = c.T @ c / n + 2 * gamma_q * np.eye(q)
    return np.linalg.norm(H, 2)


def chi2_1_sf(x):
    """Upper tail of chi-square(1): P(|N(0,1)| > sqrt(x)) = erfc(sqrt(x / 2))."""
    return math.erfc(math.sqrt(x / 2.0))


def grid_argmin(f, lo=-5.0, hi=5.0, step=1e-4):
    grid = np.arange(lo, hi + step / 2, step)
    vals = np.array([f(t) for t in grid]) if not hasattr(f, "vectorized") else f(grid)
    return float(grid[np.argmin(vals)])
