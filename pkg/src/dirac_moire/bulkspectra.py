"""Closed-form spectral theory of the 4x4 bulk symbol.

Eigenvalues come in pairs {-E+, -E-, E-, E+} with
    E+-^2 = Omega^2 + lam^2/2 + |xi|^2 +- sqrt((4 Omega^2 + lam^2)|xi|^2 + lam^4/4).
Smooth eigenvectors for bands 3, 4 are built in the canonical sector
(Omega > 0, lam > 0, eta = +1, stacking +1) and transported to the other
sectors with constant unitary conjugations.
"""
from __future__ import annotations

import numpy as np

from .model import SIGMA0, SIGMA1, SIGMA3, ModelError, ModelParams


def _e_pm(p: ModelParams, s):
    """(E-, E+) as functions of s = |xi|^2."""
    O2, l2 = p.omega**2, p.lam**2
    root = np.sqrt((4 * O2 + l2) * s + 0.25 * l2 * l2)
    a = O2 + 0.5 * l2 + s
    e_plus = np.sqrt(a + root)
    # a - root written without cancellation: (a^2 - root^2) / (a + root)
    num = O2 * O2 + O2 * l2 + s * s + 2 * O2 * s - 4 * O2 * s
    e_minus = np.sqrt(np.maximum(num, 0.0) / (a + root))
    return e_minus, e_plus


def bulk_eigenvalues(p: ModelParams, xi, zeta) -> np.ndarray:
    """Sorted eigenvalues (..., 4) from the closed form."""
    s = np.asarray(xi, dtype=float) ** 2 + np.asarray(zeta, dtype=float) ** 2
    em, ep = _e_pm(p, s)
    return np.stack([-ep, -em, em, ep], axis=-1)


def bulk_gap(p: ModelParams) -> tuple[float, float]:
    """(E_min, |xi|^2 at the minimum) of the third band."""
    if not p.gapped:
        raise ModelError("bulk is gapless when lambda * Omega = 0")
    O2, l2 = p.omega**2, p.lam**2
    e_min = abs(p.omega * p.lam) / np.sqrt(4 * O2 + l2)
    s_min = 2 * O2 * (2 * O2 + l2) / (4 * O2 + l2)
    return float(e_min), float(s_min)


def beta(p: ModelParams) -> float:
    return 2 * abs(p.omega) + np.sqrt(4 * p.omega**2 + p.lam**2)


# ---------------------------------------------------------------- smooth gauge

def _canonical(omega: float, lam: float, band: int, z):
    """Unit eigenvector of the stacking-+ symbol (eta=+1) at xi = z (complex array)."""
    z = np.asarray(z, dtype=complex)
    s = np.abs(z) ** 2
    O, l = omega, lam
    em, ep = _e_pm(ModelParams(O, l), s)
    zero = np.zeros_like(z)
    if band == 4:
        E = ep
        # a = Omega + E - s/(Omega + E) = ((Omega+E)^2 - s)/(Omega+E), numerator expanded stably
        b = np.sqrt((4 * O * O + l * l) * s + 0.25 * l**4)
        a = (2 * O * O + 0.5 * l * l + 2 * O * E + b) / (O + E)
        u = np.stack([np.conj(z) / (E - O) * a, a + zero, l + zero, l * z / (O + E)], axis=-1)
    elif band == 3:
        E = em
        # g = (E - Omega)/s is analytic in s: E^2 - O^2 = s (s - 4 O^2)/(lam^2/2 + s + root)
        b = np.sqrt((4 * O * O + l * l) * s + 0.25 * l**4)
        g = (s - 4 * O * O) / ((0.5 * l * l + s + b) * (E + O))
        w = z * (1.0 - g * g * s)           # = xi - (Omega - E)^2 / conj(xi)
        u = np.stack([l + zero, l * g * z, -w, -z / (O + E) * w], axis=-1)
    else:
        raise ModelError("smooth gauge is only provided for bands 3 and 4")
    return u / np.linalg.norm(u, axis=-1, keepdims=True)


_S3_TO_PLUS = np.kron(SIGMA0, SIGMA1)   # H_-(eta) = X H_+(-eta) X
_D_LAM = np.kron(SIGMA3, SIGMA0)         # H(lam) -> H(-lam)


def smooth_eigenvector(p: ModelParams, band: int, xi, zeta) -> np.ndarray:
    """Smooth-gauge unit eigenvector (..., 4) of bulk_symbol for band 3 or 4."""
    if band not in (3, 4):
        raise ModelError("band must be 3 or 4")
    if not p.gapped:
        raise ModelError("smooth gauge needs lambda * Omega != 0")
    xi = np.asarray(xi, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    eta, stacking = p.eta, p.stacking
    U = np.eye(4, dtype=complex)
    # stacking -: conjugate by 1 x s1 and flip eta
    if stacking == -1:
        U = U @ _S3_TO_PLUS
        eta = -eta
    # Omega < 0: conjugate by s1 x s1 (S3), which also flips eta
    if p.omega < 0:
        U = U @ np.kron(SIGMA1, SIGMA1)
        eta = -eta
    if p.lam < 0:
        U = U @ _D_LAM
    z = xi + 1j * eta * zeta
    u = _canonical(abs(p.omega), abs(p.lam), band, z)
    return u @ U.T


def limit_vector(p: ModelParams, band: int, theta) -> np.ndarray:
    """|xi| -> infinity limit of the canonical-sector gauge along direction theta."""
    b = beta(p)
    l = abs(p.lam)
    c = 1.0 / np.sqrt(2 * l * l + 2 * b * b)
    e = np.exp(1j * np.asarray(theta, dtype=float))
    if band == 4:
        v = np.stack([np.conj(e) * b, b + 0 * e, l + 0 * e, l * e], axis=-1)
    else:
        v = np.stack([l + 0 * e, l * e, -b * e, -b * e * e], axis=-1)
    return c * v
