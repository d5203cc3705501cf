r"""
Gauss rules and orthonormal Laguerre polynomials for the model spaces.

All rules are normalised against the *probability* measure of the model
space, so the weights sum to one:

* :func:`gauss_hermite` integrates against the standard Gaussian
  $\gamma(dz) = (2\pi)^{-1/2} e^{-z^2/2} dz$.
* :func:`gauss_laguerre` integrates against the gamma law
  $\mu_p(dx) = x^{p-1} e^{-x} / \Gamma(p) \, dx$ with $\alpha = p - 1$.

The Laguerre nodes come from the Golub-Welsch eigenvalue problem and the
weights from the Christoffel function evaluated with a rescaled
recurrence, which avoids the overflow that affects $L_n^\alpha$ at large
nodes and keeps the far-tail weights accurate in relative terms.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.linalg import eigh_tridiagonal


@lru_cache(maxsize=32)
def gauss_hermite(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the ``n``-point rule for the standard Gaussian."""
    z, w = hermegauss(n)
    w = w / np.sqrt(2.0 * np.pi)
    z.setflags(write=False)
    w.setflags(write=False)
    return z, w


@lru_cache(maxsize=32)
def gauss_laguerre(n: int, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the ``n``-point rule for the gamma law with shape ``alpha + 1``.

    Nodes are the eigenvalues of the Jacobi matrix. Weights come from the
    Christoffel function ``1 / sum_k l_k(x_i)^2`` rather than from the
    eigenvectors, whose tiny components are only accurate in absolute terms.
    """
    k = np.arange(n, dtype=float)
    diag = 2.0 * k + alpha + 1.0
    off = np.sqrt(k[1:] * (k[1:] + alpha))
    x = eigh_tridiagonal(diag, off, eigvals_only=True)
    w = np.exp(_christoffel_log_weights(n, alpha, x))
    w = w / w.sum()
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _christoffel_log_weights(n: int, alpha: float, x: np.ndarray) -> np.ndarray:
    # -log sum_{k<n} l_k(x)^2, running the recurrence with per-node rescaling
    prev = np.zeros_like(x)
    cur = np.ones_like(x)
    total = np.ones_like(x)
    log_scale = np.zeros_like(x)
    for m in range(n - 1):
        a = 2.0 * m + alpha + 1.0
        c = np.sqrt((m + 1.0) * (m + alpha + 1.0))
        b = np.sqrt(m * (m + alpha)) if m > 0 else 0.0
        nxt = ((a - x) * cur - b * prev) / c
        total += nxt**2
        big = np.abs(nxt) > 1e100
        if np.any(big):
            f = np.where(big, np.abs(nxt), 1.0)
            nxt, cur, total = nxt / f, cur / f, total / f**2
            log_scale += np.log(f)
        prev, cur = cur, nxt
    return -(np.log(total) + 2.0 * log_scale)


@lru_cache(maxsize=8)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on [0, 1]."""
    z, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (z + 1.0), 0.5 * w


def laguerre_orthonormal(
    n_max: int, alpha: float, x: np.ndarray, deriv: int = 0, scaled: bool = False
) -> np.ndarray:
    r"""
    Evaluate orthonormal generalised Laguerre polynomials and derivatives.

    Returns an array of shape ``(deriv + 1, n_max + 1) + x.shape`` whose entry
    ``[k, n]`` is the ``k``-th derivative of $\ell_n$, where $\ell_n$ is
    $L_n^\alpha$ rescaled to unit norm in $L^2(\mu_{\alpha+1})$.

    The three-term recurrence

    .. math::
        \sqrt{(n+1)(n+\alpha+1)}\,\ell_{n+1}
        = (2n+\alpha+1-x)\,\ell_n - \sqrt{n(n+\alpha)}\,\ell_{n-1}

    is differentiated term by term for the derivatives. With ``scaled=True``
    every value is multiplied by ``exp(-x/2)`` (only valid for ``deriv=0``),
    which keeps large nodes finite.
    """
    x = np.asarray(x, dtype=float)
    if scaled and deriv:
        raise ValueError("scaled evaluation only supports deriv=0")
    out = np.zeros((deriv + 1, n_max + 1) + x.shape)
    out[0, 0] = np.exp(-0.5 * x) if scaled else 1.0
    if n_max == 0:
        return out
    for n in range(n_max):
        a = 2.0 * n + alpha + 1.0
        c = np.sqrt((n + 1.0) * (n + alpha + 1.0))
        b = np.sqrt(n * (n + alpha)) if n > 0 else 0.0
        for k in range(deriv + 1):
            val = (a - x) * out[k, n]
            if k > 0:
                val = val - k * out[k - 1, n]
            if n > 0:
                val = val - b * out[k, n - 1]
            out[k, n + 1] = val / c
    return out
