"""Strain kernels: spectral split, regularized eigenvalue parts, energies, stress.

Symmetric 2x2 tensors are stored as arrays whose last axis holds the
components ``(xx, yy, xy)`` (tensor, not engineering, shear). Every function
broadcasts over leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.special import erfc

METHODS = ("none", "sonic_point", "exp_convolution", "smoothed_2point")

_SQRT2 = np.sqrt(2.0)
_SQRT2PI = np.sqrt(2.0 * np.pi)
DEGENERATE_GAP = 1e-14


@dataclass(frozen=True)
class MaterialModel:
    """Lame constants (kN/mm^2), toughness g_c (kN/mm), length scale l (mm)."""

    lam: float = 121.15
    mu: float = 80.77
    g_c: float = 2.7e-3
    l: float = 0.0075
    k_l: float = 0.0
    regularization: str = "sonic_point"
    alpha: float = 1e-3

    def __post_init__(self):
        if self.regularization not in METHODS:
            raise ValueError(f"unknown regularization {self.regularization!r}")
        for name in ("lam", "mu", "g_c", "l"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.k_l < 0:
            raise ValueError("k_l must be non-negative")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.regularization != "none" and self.alpha == 0:
            raise ValueError("alpha = 0 requires regularization = 'none'")


def sym(xx, yy, xy) -> np.ndarray:
    return np.stack(np.broadcast_arrays(xx, yy, xy), axis=-1).astype(float)


class EigenPair2(NamedTuple):
    eigvals: np.ndarray  # (..., 2), descending
    eigvecs: np.ndarray  # (..., 2, 2), columns are eigenvectors


def eig_sym2(t) -> EigenPair2:
    """Closed-form eigen-decomposition of a symmetric 2x2 tensor."""
    t = np.asarray(t, dtype=float)
    xx, yy, xy = t[..., 0], t[..., 1], t[..., 2]
    mid = 0.5 * (xx + yy)
    half = 0.5 * (xx - yy)
    rad = np.hypot(half, xy)
    angle = np.where(rad > DEGENERATE_GAP, 0.5 * np.arctan2(xy, half), 0.0)
    c, s = np.cos(angle), np.sin(angle)
    q = np.empty(t.shape[:-1] + (2, 2))
    q[..., 0, 0], q[..., 1, 0] = c, s
    q[..., 0, 1], q[..., 1, 1] = -s, c
    return EigenPair2(np.stack([mid + rad, mid - rad], axis=-1), q)


# --- regularized positive/negative parts -------------------------------------

# Smoothed 2-point kernel: lambda^+_alpha = alpha * p(lambda / alpha), with p
# piecewise quartic on the breakpoints below (ascending coefficients).
_BREAKS = (-1.5, -0.5, 0.5, 1.5)
_PIECES = (
    np.array([27 / 128, 9 / 16, 9 / 16, 1 / 4, 1 / 24]),
    np.array([13 / 64, 1 / 2, 3 / 8, 0.0, -1 / 12]),
    np.array([27 / 128, 7 / 16, 9 / 16, -1 / 4, 1 / 24]),
)


def _antiderivatives():
    # Primitive of p vanishing at -1.5, continued continuously across breaks.
    out = []
    for (a, _b), c in zip(zip(_BREAKS[:-1], _BREAKS[1:]), _PIECES):
        prim = P.polyint(c)
        prim[0] -= P.polyval(a, prim)
        if out:
            prim[0] += P.polyval(a, out[-1])
        out.append(prim)
    tail = P.polyval(1.5, out[-1]) - 1.5 ** 2 / 2
    return tuple(out), tail


_PRIMS, _TAIL = _antiderivatives()


def _pieces(s, coeffs, outside):
    out = outside
    for (a, b), c in zip(zip(_BREAKS[:-1], _BREAKS[1:]), coeffs):
        m = (s >= a) & (s < b)
        out = np.where(m, P.polyval(s, c), out)
    return out


def _two_point_primitive(s):
    return _pieces(s, _PRIMS, np.where(s >= 1.5, s * s / 2 + _TAIL, 0.0))


_MINUS_PIECES = (
    np.array([-27 / 128, 7 / 16, -9 / 16, -1 / 4, -1 / 24]),
    np.array([-13 / 64, 1 / 2, -3 / 8, 0.0, 1 / 12]),
    np.array([-27 / 128, 9 / 16, -9 / 16, 1 / 4, -1 / 24]),
)


def regularized_parts(x, method: str, alpha: float):
    """Return (x^+_alpha, x^-_alpha) for one of the four methods."""
    x = np.asarray(x, dtype=float)
    if method == "none" or alpha == 0.0:
        return 0.5 * (x + np.abs(x)), 0.5 * (x - np.abs(x))
    if method == "sonic_point":
        r = np.hypot(x, alpha)
        a2 = alpha * alpha
        with np.errstate(divide="ignore", invalid="ignore"):
            plus = np.where(x >= 0, 0.5 * (x + r), 0.5 * a2 / (r - x))
            minus = np.where(x <= 0, 0.5 * (x - r), -0.5 * a2 / (r + x))
        return plus, minus
    if method == "exp_convolution":
        z = x / (_SQRT2 * alpha)
        bump = alpha / _SQRT2PI * np.exp(-z * z)
        return 0.5 * x * erfc(-z) + bump, 0.5 * x * erfc(z) - bump
    if method == "smoothed_2point":
        # explicit branches for both parts, so the sum identity is a real check
        s = x / alpha
        plus = _pieces(s, _PIECES, 0.0)
        minus = _pieces(s, _MINUS_PIECES, 0.0)
        plus = np.where(s >= 1.5, x, np.where(s < -1.5, 0.0, alpha * plus))
        minus = np.where(s < -1.5, x, np.where(s >= 1.5, 0.0, alpha * minus))
        return plus, minus
    raise ValueError(f"unknown regularization {method!r}")


def regularized_potential(x, method: str, alpha: float):
    """Primitives (Phi^+, Phi^-) with d/dx Phi^pm = x^pm_alpha.

    For the two convolution methods these are the mollified (x^pm)^2 / 2;
    every method satisfies Phi^-(x) = Phi^+(-x).
    """
    x = np.asarray(x, dtype=float)

    def plus(y):
        if method == "none" or alpha == 0.0:
            return 0.5 * np.maximum(y, 0.0) ** 2
        if method == "sonic_point":
            r = np.hypot(y, alpha)
            return 0.25 * (y * y + y * r + alpha * alpha * np.arcsinh(y / alpha))
        if method == "exp_convolution":
            z = y / alpha
            cdf = 0.5 * erfc(-z / _SQRT2)
            pdf = np.exp(-0.5 * z * z) / _SQRT2PI
            return 0.5 * ((y * y + alpha * alpha) * cdf + y * alpha * pdf)
        if method == "smoothed_2point":
            return alpha * alpha * _two_point_primitive(y / alpha)
        raise ValueError(f"unknown regularization {method!r}")

    return plus(x), plus(-x)


def reg_eig_plus(lam, material: MaterialModel):
    return regularized_parts(lam, material.regularization, material.alpha)[0]


def reg_eig_minus(lam, material: MaterialModel):
    return regularized_parts(lam, material.regularization, material.alpha)[1]


# --- tensor split and energies -------------------------------------------------

def _recompose(q, f1, f2):
    c, s = q[..., 0, 0], q[..., 1, 0]
    return np.stack([f1 * c * c + f2 * s * s,
                     f1 * s * s + f2 * c * c,
                     (f1 - f2) * c * s], axis=-1)


def strain_split(eps, material: MaterialModel):
    """Spectral split eps = eps^+ + eps^- with regularized eigenvalue parts."""
    vals, q = eig_sym2(eps)
    p, m = regularized_parts(vals, material.regularization, material.alpha)
    return _recompose(q, p[..., 0], p[..., 1]), _recompose(q, m[..., 0], m[..., 1])


def trace(t):
    t = np.asarray(t)
    return t[..., 0] + t[..., 1]


def psi_parts(eps, material: MaterialModel):
    """(Psi^+, Psi^-) = lam/2 ((tr e)^pm)^2 + mu tr((e^pm)^2)."""
    eps = np.asarray(eps, dtype=float)
    vals, _ = eig_sym2(eps)
    meth, a = material.regularization, material.alpha
    tp, tm = regularized_parts(trace(eps), meth, a)
    vp, vm = regularized_parts(vals, meth, a)
    lam, mu = material.lam, material.mu
    psi_p = 0.5 * lam * tp * tp + mu * (vp * vp).sum(axis=-1)
    psi_m = 0.5 * lam * tm * tm + mu * (vm * vm).sum(axis=-1)
    return psi_p, psi_m


def psi_plus(eps, material: MaterialModel):
    return psi_parts(eps, material)[0]


def psi_minus(eps, material: MaterialModel):
    return psi_parts(eps, material)[1]


def degradation(d, material: MaterialModel):
    d = np.asarray(d, dtype=float)
    return d * d + material.k_l


def stress(eps, d, material: MaterialModel) -> np.ndarray:
    """sigma = (d^2 + k_l)(lam tr^+ I + 2 mu eps^+) + (lam tr^- I + 2 mu eps^-)."""
    eps = np.asarray(eps, dtype=float)
    vals, q = eig_sym2(eps)
    meth, a = material.regularization, material.alpha
    tp, tm = regularized_parts(trace(eps), meth, a)
    vp, vm = regularized_parts(vals, meth, a)
    g = degradation(d, material)
    lam, mu = material.lam, material.mu
    # both parts share eigenvectors, so combine eigenvalues before recomposing
    f1 = g * (2 * mu * vp[..., 0]) + 2 * mu * vm[..., 0]
    f2 = g * (2 * mu * vp[..., 1]) + 2 * mu * vm[..., 1]
    iso = lam * (g * tp + tm)
    sig = _recompose(q, f1, f2)
    sig[..., 0] += iso
    sig[..., 1] += iso
    return sig


def energy_density(eps, d, material: MaterialModel):
    """Stored energy whose strain gradient is :func:`stress`.

    (d^2 + k_l) Psi~^+ + Psi~^-, where Psi~^pm = lam Phi^pm(tr e) + 2 mu sum Phi^pm(e_i)
    uses the primitives of the regularized parts. Without regularization this
    is exactly (d^2 + k_l) Psi^+ + Psi^-.
    """
    eps = np.asarray(eps, dtype=float)
    vals, _ = eig_sym2(eps)
    meth, a = material.regularization, material.alpha
    tp, tm = regularized_potential(trace(eps), meth, a)
    vp, vm = regularized_potential(vals, meth, a)
    lam, mu = material.lam, material.mu
    wp = lam * tp + 2 * mu * vp.sum(axis=-1)
    wm = lam * tm + 2 * mu * vm.sum(axis=-1)
    return degradation(d, material) * wp + wm


def history_update(psi_now, h_old):
    """Pointwise max enforcing crack irreversibility."""
    psi_now = np.asarray(psi_now, dtype=float)
    h_old = np.asarray(h_old, dtype=float)
    if psi_now.shape != h_old.shape:
        raise ValueError("history fields differ in size")
    return np.maximum(psi_now, h_old)
