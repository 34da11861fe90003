"""One-dimensional Helmholtz scattering: psi'' = (V - k^2) psi.

Plane waves e^{+-ikx} are referenced to the global coordinate, so scattering
data of adjacent segments compose without extra phases:

    from the left:  e^{ikx} + R+ e^{-ikx}  |  T+ e^{ikx}
    from the right: T- e^{-ikx}            |  e^{-ikx} + R- e^{ikx}
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


@dataclass(frozen=True)
class ScatterMatrix:
    r_plus: complex
    t_minus: complex
    t_plus: complex
    r_minus: complex
    k: float
    segment: tuple[float, float]

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.r_plus, self.t_minus], [self.t_plus, self.r_minus]])

    def unitarity_error(self) -> float:
        S = self.matrix
        return float(np.abs(S @ S.conj().T - np.eye(2)).max())


def identity_smatrix(k: float, x: float = 0.0) -> ScatterMatrix:
    return ScatterMatrix(0j, 1 + 0j, 1 + 0j, 0j, k, (x, x))


def _cell_transfer(z, h):
    """(psi, psi') propagator over length h for psi'' = -z psi (z = k^2 - V, any sign)."""
    z = np.asarray(z, dtype=float)
    q = np.sqrt(np.abs(z))
    osc = z >= 0
    qh = q * h
    c = np.where(osc, np.cos(qh), np.cosh(qh))
    # s = sin(qh)/q or sinh(qh)/q, with the linear limit h at q = 0
    safe_q = np.where(q > 0, q, 1.0)
    s = np.where(q > 0, np.where(osc, np.sin(qh), np.sinh(qh)) / safe_q, h)
    dsd = np.where(osc, -q * np.sin(qh), q * np.sinh(qh))
    return c, s, dsd


def transfer_piecewise(edges: np.ndarray, values: np.ndarray, k: float) -> np.ndarray:
    """Total (psi, psi') transfer matrix across piecewise-constant cells."""
    h = np.diff(edges)
    c, s, d = _cell_transfer(k * k - np.asarray(values, dtype=float), h)
    M = np.eye(2)
    for ci, si, di in zip(c, s, d):
        M = np.array([[ci, si], [di, ci]]) @ M
    return M


def smatrix_from_transfer(M: np.ndarray, k: float, xL: float, xR: float) -> ScatterMatrix:
    def W(x):
        e, f = np.exp(1j * k * x), np.exp(-1j * k * x)
        return np.array([[e, f], [1j * k * e, -1j * k * f]])

    m = np.linalg.solve(W(xR), M @ W(xL))
    m11, m12, m21, m22 = m[0, 0], m[0, 1], m[1, 0], m[1, 1]
    r_plus = -m21 / m22
    t_plus = m11 + m12 * r_plus
    t_minus = 1.0 / m22
    r_minus = m12 / m22
    return ScatterMatrix(complex(r_plus), complex(t_minus), complex(t_plus), complex(r_minus), k, (xL, xR))


def smatrix_piecewise(edges, values, k: float) -> ScatterMatrix:
    if k <= 0:
        raise ValueError("k must be positive")
    edges = np.asarray(edges, dtype=float)
    if edges.size < 2 or edges[-1] == edges[0]:
        return identity_smatrix(k, float(edges[0]) if edges.size else 0.0)
    return smatrix_from_transfer(transfer_piecewise(edges, values, k), k, edges[0], edges[-1])


def numeric_smatrix(V: Callable | np.ndarray, x_left: float, x_right: float, k: float,
                    n_cells: int = 1000) -> ScatterMatrix:
    """Piecewise-constant transfer matrix with midpoint sampling of V (or given cell values)."""
    if k <= 0:
        raise ValueError("k must be positive")
    if x_right < x_left:
        raise ValueError("x_right must not be left of x_left")
    if callable(V):
        edges = np.linspace(x_left, x_right, n_cells + 1)
        vals = V(0.5 * (edges[:-1] + edges[1:]))
    else:
        vals = np.asarray(V, dtype=float)
        edges = np.linspace(x_left, x_right, vals.size + 1)
    return smatrix_piecewise(edges, vals, k)


def richardson_error(V: Callable, x_left: float, x_right: float, k: float, n_cells: int = 1000) -> float:
    """Estimated error of the n-cell S-matrix from the n / 2n difference (second-order scheme)."""
    a = numeric_smatrix(V, x_left, x_right, k, n_cells).matrix
    b = numeric_smatrix(V, x_left, x_right, k, 2 * n_cells).matrix
    return float(np.abs(a - b).max() * 4.0 / 3.0)


def closed_form_barrier(V0: float, a: float, k: float) -> complex:
    """R-^L of the barrier V0 on [-a, a] (propagating regime k^2 > V0)."""
    if k * k <= V0:
        raise ValueError("closed form requires k^2 > V0")
    q = np.sqrt(k * k - V0)
    num = V0 * np.sin(2 * q * a) * np.exp(-2j * k * a)
    den = (2 * k * k - V0) * np.sin(2 * q * a) + 2j * k * q * np.cos(2 * q * a)
    return complex(num / den)


@dataclass(frozen=True)
class SplitResult:
    sigma_plus: float
    sigma_minus: float
    uL: complex
    vL: complex
    uR: complex
    vR: complex


def split_conductivities(SL: ScatterMatrix, SR: ScatterMatrix) -> SplitResult:
    d = 1.0 - SL.r_minus * SR.r_plus
    if abs(d) < 1e-14:
        raise ZeroDivisionError("total reflection on both sides: split is degenerate")
    uL = SL.t_plus / d
    vL = SR.r_plus * SL.t_plus / d
    vR = SR.t_minus / d
    uR = SL.r_minus * SR.t_minus / d
    sp = abs(uL) ** 2 + abs(uR) ** 2
    sm = -(abs(vL) ** 2 + abs(vR) ** 2)
    return SplitResult(float(sp), float(sm), complex(uL), complex(vL), complex(uR), complex(vR))


def compose(SL: ScatterMatrix, SR: ScatterMatrix) -> ScatterMatrix:
    """Scattering data of the concatenation (left segment then right segment)."""
    d = 1.0 - SL.r_minus * SR.r_plus
    t_plus = SR.t_plus * SL.t_plus / d
    t_minus = SL.t_minus * SR.t_minus / d
    r_plus = SL.r_plus + SL.t_minus * SR.r_plus * SL.t_plus / d
    r_minus = SR.r_minus + SR.t_plus * SL.r_minus * SR.t_minus / d
    return ScatterMatrix(complex(r_plus), complex(t_minus), complex(t_plus), complex(r_minus), SL.k,
                         (SL.segment[0], SR.segment[1]))


def split_smatrices(V: Callable, x_left: float, x_right: float, x0: float, k: float,
                    n_cells: int = 1000, tol: float = 1e-12) -> tuple[ScatterMatrix, ScatterMatrix]:
    """S-matrices of V restricted to [x_left, x0] and [x0, x_right]."""
    if x_left < x0 < x_right and abs(float(V(np.array([x0]))[0])) > tol:
        warnings.warn(f"splitting at x0={x0} where V does not vanish", stacklevel=2)
    a, b = min(max(x0, x_left), x_right), max(min(x0, x_right), x_left)
    L = x_right - x_left
    nl = max(1, int(round(n_cells * (a - x_left) / L))) if a > x_left else 0
    nr = max(1, int(round(n_cells * (x_right - b) / L))) if x_right > b else 0
    SL = numeric_smatrix(V, x_left, a, k, nl) if nl else identity_smatrix(k, x_left)
    SR = numeric_smatrix(V, b, x_right, k, nr) if nr else identity_smatrix(k, x_right)
    return SL, SR


def position_sweep(V: Callable, x_left: float, x_right: float, k: float, x0_list: Sequence[float],
                   n_cells: int = 1000) -> np.ndarray:
    """sigma+ at each x0; V must vanish outside [x_left, x_right]."""
    out = []
    for x0 in x0_list:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            SL, SR = split_smatrices(V, x_left, x_right, float(x0), k, n_cells)
        out.append(split_conductivities(SL, SR).sigma_plus)
    return np.asarray(out)


def barrier(V0: float, a: float) -> Callable:
    return lambda x: np.where(np.abs(np.asarray(x)) <= a, V0, 0.0)
