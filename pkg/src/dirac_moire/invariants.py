"""Berry-curvature integrals of the bulk bands over the momentum plane.

W^j = (1/2pi) * integral of the Berry curvature of band j (connection i<u|du>),
which for a gauge smooth on all of R^2 equals the limit of the boundary
line integral (i/2pi) \\oint (u, du) on large circles.

The disk part is a gauge-invariant plaquette sum on a polar lattice; the tail
outside radius R is the difference of two smooth-gauge line integrals,
at R and at a far radius.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .bulkspectra import smooth_eigenvector
from .model import ModelError, ModelParams, bulk_symbol_batch

TWO_PI = 2 * np.pi


class DegeneratePointError(ValueError):
    """Gap closure between the selected bands and the rest inside the disk."""


@dataclass
class CurvatureField:
    xi1: np.ndarray     # plaquette centres
    xi2: np.ndarray
    values: np.ndarray  # contribution of each plaquette to W (flux / 2pi)
    geometry: str
    R: float

    @property
    def total(self) -> float:
        return float(self.values.sum())

    def to_csv(self, path) -> None:
        data = np.column_stack([self.xi1.ravel(), self.xi2.ravel(), self.values.ravel()])
        np.savetxt(path, data, delimiter=",", header="xi1,xi2,value", comments="", fmt="%.12e")


def _frames(p: ModelParams, bands: tuple[int, ...], xi1, xi2, gauge=None, min_gap=1e-10):
    """Eigenvector frames (..., 4, nb) of the chosen bands from a dense batched eigensolve."""
    H = bulk_symbol_batch(p, xi1, xi2)
    w, V = np.linalg.eigh(H)
    idx = [b - 1 for b in bands]
    # separation of the selected set from the others
    others = [j for j in range(4) if j not in idx]
    sel_w, oth_w = w[..., idx], w[..., others]
    sep = np.abs(sel_w[..., :, None] - oth_w[..., None, :]).min(axis=(-1, -2))
    if sep.min() < min_gap:
        raise DegeneratePointError(f"bands {bands} touch the rest (separation {sep.min():.2e})")
    F = V[..., idx]
    if gauge is not None:
        F = F * np.exp(1j * gauge(np.asarray(xi1), np.asarray(xi2)))[..., None, None]
    return F


def _link(Fa, Fb):
    """det <Fa|Fb> for frames (..., 4, nb)."""
    M = np.einsum("...ia,...ib->...ab", Fa.conj(), Fb)
    return M[..., 0, 0] if M.shape[-1] == 1 else np.linalg.det(M)


def _check(p: ModelParams, bands, R, n):
    if not p.gapped:
        raise DegeneratePointError("lambda * Omega = 0: the bulk bands touch")
    bands = tuple(sorted(set(bands)))
    if not bands or any(b not in (3, 4) for b in bands):
        raise ModelError("bands must be a non-empty subset of {3, 4}")
    if R <= 0 or n < 16:
        raise ValueError("need R > 0 and n >= 16")
    return bands


def curvature_map(p: ModelParams, bands: Iterable[int], R: float = 50.0, n: int = 600,
                  geometry: str = "polar", gauge: Callable | None = None) -> CurvatureField:
    """Plaquette curvature: -arg(prod of links around the cell) / 2pi, counterclockwise."""
    bands = _check(p, bands, R, n)
    if geometry == "square":
        t = np.linspace(-R, R, n)
        X1, X2 = np.meshgrid(t, t, indexing="ij")
        F = _frames(p, bands, X1, X2, gauge)
        u1 = _link(F[:-1, :-1], F[1:, :-1])
        u2 = _link(F[1:, :-1], F[1:, 1:])
        u3 = _link(F[1:, 1:], F[:-1, 1:])
        u4 = _link(F[:-1, 1:], F[:-1, :-1])
        vals = -np.angle(u1 * u2 * u3 * u4) / TWO_PI
        c1 = 0.5 * (X1[:-1, :-1] + X1[1:, 1:])
        c2 = 0.5 * (X2[:-1, :-1] + X2[1:, 1:])
        return CurvatureField(c1, c2, vals, geometry, R)
    if geometry != "polar":
        raise ValueError(f"unknown geometry {geometry!r}")
    nr, nt = n, n
    r = np.linspace(0.0, R, nr + 1)[1:]
    th = np.linspace(0.0, TWO_PI, nt, endpoint=False)
    Rr, Th = np.meshgrid(r, th, indexing="ij")
    F = _frames(p, bands, Rr * np.cos(Th), Rr * np.sin(Th), gauge)
    F0 = _frames(p, bands, np.zeros(1), np.zeros(1), gauge)[0]
    Fn = np.roll(F, -1, axis=1)  # theta + dtheta
    # central triangles (0, (r1, th_j), (r1, th_j+1))
    tri = _link(F0[None], F[0]) * _link(F[0], Fn[0]) * _link(Fn[0], F0[None])
    quad = _link(F[:-1], F[1:]) * _link(F[1:], Fn[1:]) * _link(Fn[1:], Fn[:-1]) * _link(Fn[:-1], F[:-1])
    vals = np.concatenate([tri[None], quad], axis=0)
    vals = -np.angle(vals) / TWO_PI
    redge = np.concatenate([[0.0], r])
    rc = 0.5 * (redge[:-1] + redge[1:])
    tc = th + np.pi / nt
    Rc, Tc = np.meshgrid(rc, tc, indexing="ij")
    return CurvatureField(Rc * np.cos(Tc), Rc * np.sin(Tc), vals, geometry, R)


def boundary_term(p: ModelParams, band: int, R: float, m: int = 4096, gauge: Callable | None = None) -> float:
    """(i/2pi) \\oint_{|xi|=R} (u, du) in the smooth gauge, counterclockwise."""
    th = np.linspace(0.0, TWO_PI, m, endpoint=False)
    x1, x2 = R * np.cos(th), R * np.sin(th)
    u = smooth_eigenvector(p, band, x1, x2)
    if gauge is not None:
        u = u * np.exp(1j * gauge(x1, x2))[:, None]
    links = np.einsum("ij,ij->i", u.conj(), np.roll(u, -1, axis=0))
    return float(-np.angle(links).sum() / TWO_PI)


def far_radius(p: ModelParams) -> float:
    return 1e6 * max(1.0, abs(p.omega), abs(p.lam))


def half_invariant(p: ModelParams, band: int, R: float = 50.0, n: int = 600,
                   gauge: Callable | None = None, boundary_points: int = 4096) -> float:
    """W^band: disk plaquette sum plus the smooth-gauge tail between R and the far radius."""
    if band not in (3, 4):
        raise ModelError("band must be 3 or 4")
    disk = curvature_map(p, (band,), R, n, "polar", gauge).total
    tail = boundary_term(p, band, far_radius(p), boundary_points, gauge) \
        - boundary_term(p, band, R, boundary_points, gauge)
    return disk + tail


@dataclass
class InvariantReport:
    W: float
    nearest_int: int
    residual: float
    halves: dict  # {(stacking, band): W}

    @property
    def gluing(self) -> tuple[float, float]:
        """(W_+^4 - W_-^3, W_+^3 - W_-^4): integer Chern numbers of the glued bundles."""
        h = self.halves
        return h[(1, 4)] - h[(-1, 3)], h[(1, 3)] - h[(-1, 4)]


def bulk_difference_invariant(p: ModelParams, R: float = 50.0, n: int = 600) -> InvariantReport:
    """W = W_+ - W_- with W_s = W_s^3 + W_s^4."""
    halves = {}
    for s in (1, -1):
        q = p.with_(stacking=s)
        for b in (3, 4):
            halves[(s, b)] = half_invariant(q, b, R, n)
    W = halves[(1, 3)] + halves[(1, 4)] - halves[(-1, 3)] - halves[(-1, 4)]
    k = int(np.rint(W))
    return InvariantReport(float(W), k, float(abs(W - k)), halves)
