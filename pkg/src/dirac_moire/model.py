"""Continuous model ingredients.

Switch functions, junction geometry (f, g), mass profiles and the pointwise
symbols of every Hamiltonian used in the package.  Everything here is a pure
function of immutable parameters, evaluated in closed form so the dealiasing
sampler in :mod:`dirac_moire.fourier` sees exact values.

Coordinates passed to the coefficient helpers are *physical* coordinates,
centred on the junction / interface (the torus cell is shifted by the
assembler).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

SIGMA0 = np.eye(2, dtype=complex)
SIGMA1 = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA2 = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA3 = np.array([[1, 0], [0, -1]], dtype=complex)
A_MAT = np.array([[0, 1], [0, 0]], dtype=complex)

Profile = Literal["tanh", "smoothstep"]


class ModelError(ValueError):
    """Invalid model parameters."""


@dataclass(frozen=True)
class ModelParams:
    """Bulk parameters: gating Omega, interlayer coupling lam, valley eta, stacking (+1 / -1)."""

    omega: float = 1.0
    lam: float = 0.2
    eta: int = 1
    stacking: int = 1

    def __post_init__(self):
        if self.eta not in (-1, 1):
            raise ModelError(f"eta must be +1 or -1, got {self.eta}")
        if self.stacking not in (-1, 1):
            raise ModelError(f"stacking must be +1 or -1, got {self.stacking}")

    @property
    def gapped(self) -> bool:
        return self.omega * self.lam != 0.0

    def with_(self, **kw) -> "ModelParams":
        d = dict(omega=self.omega, lam=self.lam, eta=self.eta, stacking=self.stacking)
        d.update(kw)
        return ModelParams(**d)


# ---------------------------------------------------------------- switches

def _profile(u, kind: Profile):
    """Monotone transition on u in [0, 1] with h(0)=0, h(1)=1, h(1-u)=1-h(u)."""
    u = np.asarray(u, dtype=float)
    if kind == "smoothstep":
        return u**3 * (10.0 - 15.0 * u + 6.0 * u * u)
    if kind == "tanh":
        s = 2.0 * u - 1.0
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            z = 2.0 * s / (1.0 - s * s)
            h = 0.5 * (1.0 + np.tanh(z))
        return np.where(u <= 0.0, 0.0, np.where(u >= 1.0, 1.0, h))
    raise ModelError(f"unknown switch profile {kind!r}")


def _profile_deriv(u, kind: Profile):
    u = np.asarray(u, dtype=float)
    if kind == "smoothstep":
        return 30.0 * u * u * (1.0 - u) ** 2
    if kind == "tanh":
        s = 2.0 * u - 1.0
        inside = (u > 0.0) & (u < 1.0)
        sc = np.where(inside, s, 0.0)
        z = 2.0 * sc / (1.0 - sc * sc)
        # sech^2 via exp keeps large |z| clean (no overflow warnings)
        e = np.exp(-2.0 * np.abs(z))
        sech2 = 4.0 * e / (1.0 + e) ** 2
        dz = 2.0 * (1.0 + sc * sc) / (1.0 - sc * sc) ** 2
        return np.where(inside, 0.5 * sech2 * dz * 2.0, 0.0)
    raise ModelError(f"unknown switch profile {kind!r}")


@dataclass(frozen=True)
class SwitchSpec:
    """Smooth switch equal to v1 below c1 and v2 above c2 (bit-exact plateaus).

    The default ``tanh`` profile 1/2(1+tanh(2s/(1-s^2))) is C-infinity; the
    quintic ``smoothstep`` is kept as an alternative (C^2 only).
    """

    v1: float = 0.0
    v2: float = 1.0
    c1: float = -1.0
    c2: float = 1.0
    profile: Profile = "tanh"

    def __post_init__(self):
        if not self.c1 <= self.c2:
            raise ModelError(f"switch needs c1 <= c2, got {self.c1} > {self.c2}")
        if self.profile not in ("tanh", "smoothstep"):
            raise ModelError(f"unknown switch profile {self.profile!r}")

    def fraction(self, t):
        """Transition fraction h(t) in [0, 1]."""
        t = np.asarray(t, dtype=float)
        if self.c2 == self.c1:
            return np.where(t < self.c1, 0.0, 1.0)
        u = (t - self.c1) / (self.c2 - self.c1)
        return np.where(t <= self.c1, 0.0, np.where(t >= self.c2, 1.0, _profile(u, self.profile)))

    def __call__(self, t):
        h = self.fraction(t)
        return (1.0 - h) * self.v1 + h * self.v2

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        w = self.c2 - self.c1
        if w == 0:
            return np.zeros_like(t)
        u = (t - self.c1) / w
        return (self.v2 - self.v1) * _profile_deriv(u, self.profile) / w


def eval_switch(s: SwitchSpec, t):
    """Evaluate a switch; matrix-valued plateaus are supported for scalar t."""
    h = s.fraction(t)
    v1, v2 = np.asarray(s.v1), np.asarray(s.v2)
    if v1.ndim or v2.ndim:
        return (1.0 - float(h)) * v1 + float(h) * v2
    return (1.0 - h) * s.v1 + h * s.v2


@dataclass(frozen=True)
class Bump:
    """Plateau-one bump: 1 on [-inner, inner], 0 outside [-outer, outer]."""

    inner: float
    outer: float
    profile: Profile = "tanh"

    def __post_init__(self):
        if not 0 <= self.inner < self.outer:
            raise ModelError("bump needs 0 <= inner < outer")

    def __call__(self, t):
        up = SwitchSpec(0.0, 1.0, -self.outer, -self.inner, self.profile)
        down = SwitchSpec(1.0, 0.0, self.inner, self.outer, self.profile)
        return up(t) * down(t)


# ---------------------------------------------------------------- junction geometry

@dataclass(frozen=True)
class JunctionGeometry:
    """f = chi(r) r sin(k theta), g = chi(r) r (cos(theta - theta1) - cos theta0)."""

    k: int = 3
    eps_r: float = 0.25
    theta0: float = 5 * np.pi / 6
    theta1: float = 0.0
    profile: Profile = "tanh"

    def __post_init__(self):
        if self.k < 1:
            raise ModelError("k must be a positive integer")
        if not 0 < self.eps_r < 1:
            raise ModelError("eps_r must lie in (0, 1)")
        if not 0 < self.theta0 < np.pi:
            raise ModelError("theta0 must lie in (0, pi)")
        # zeros of g_Theta are theta1 +- theta0; zeros of f_Theta are multiples of pi/k
        for z in (self.theta1 + self.theta0, self.theta1 - self.theta0):
            q = z * self.k / np.pi
            if abs(q - round(q)) < 1e-9:
                raise ModelError("zero sets of f_Theta and g_Theta intersect")

    @property
    def chi(self) -> SwitchSpec:
        return SwitchSpec(0.0, 1.0, self.eps_r, 1.0, self.profile)

    def _polar(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.hypot(x, y), np.arctan2(y, x)

    def f(self, x, y):
        r, th = self._polar(x, y)
        return self.chi(r) * r * np.sin(self.k * th)

    def g(self, x, y):
        r, th = self._polar(x, y)
        return self.chi(r) * r * (np.cos(th - self.theta1) - np.cos(self.theta0))

    def growth_constants(self, n: int = 4096) -> tuple[float, float]:
        """C1, C2 with C1 <x,y> <= <f,g> <= C2 <x,y>, where <a,b> = sqrt(1+a^2+b^2)."""
        th = np.linspace(0, 2 * np.pi, n, endpoint=False)
        c = np.sin(self.k * th) ** 2 + (np.cos(th - self.theta1) - np.cos(self.theta0)) ** 2
        cmin, cmax = c.min(), c.max()
        c1 = 0.99 * min(1.0 / np.sqrt(2.0), np.sqrt(min(1.0, cmin)))
        c2 = np.sqrt(1.0 + cmax)
        return float(c1), float(c2)

    def interface_angles(self) -> np.ndarray:
        """Angles of the 2k rays where sin(k theta) = 0."""
        return np.arange(2 * self.k) * np.pi / self.k


def eval_f(geom: JunctionGeometry, x, y):
    return geom.f(x, y)


def eval_g(geom: JunctionGeometry, x, y):
    return geom.g(x, y)


DEFAULT_MASS = SwitchSpec(-1.0, 1.0, -1.0, 1.0)


def junction_mass(geom: JunctionGeometry, m: SwitchSpec, x, y):
    """m~(x, y) = m(f(x, y))."""
    return m(geom.f(x, y))


# ---------------------------------------------------------------- symbols

def bulk_symbol(p: ModelParams, xi, zeta) -> np.ndarray:
    """4x4 bulk symbol.

    stacking=+1 gives the matrix whose lower-left block is lam*A (the H_+ family
    with W_+ = -1); stacking=-1 swaps A for its adjoint.
    """
    dirac = xi * SIGMA1 + p.eta * zeta * SIGMA2
    U = A_MAT if p.stacking == 1 else A_MAT.conj().T
    h = np.zeros((4, 4), dtype=complex)
    h[:2, :2] = p.omega * SIGMA0 + dirac
    h[2:, 2:] = -p.omega * SIGMA0 + dirac
    h[2:, :2] = p.lam * U
    h[:2, 2:] = p.lam * U.conj().T
    return h


def bulk_symbol_batch(p: ModelParams, xi, zeta) -> np.ndarray:
    """Vectorised bulk_symbol, shape (..., 4, 4)."""
    xi = np.asarray(xi, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    z = xi + 1j * p.eta * zeta
    h = np.zeros(xi.shape + (4, 4), dtype=complex)
    h[..., 0, 0] = h[..., 1, 1] = p.omega
    h[..., 2, 2] = h[..., 3, 3] = -p.omega
    h[..., 0, 1] = h[..., 2, 3] = np.conj(z)
    h[..., 1, 0] = h[..., 3, 2] = z
    if p.stacking == 1:
        h[..., 2, 1] = h[..., 1, 2] = p.lam
    else:
        h[..., 3, 0] = h[..., 0, 3] = p.lam
    return h


def dirac_symbol(mass, xi, zeta) -> np.ndarray:
    return xi * SIGMA1 + zeta * SIGMA2 + mass * SIGMA3


# ---------------------------------------------------------------- edge model

@dataclass(frozen=True)
class EdgeModel:
    """H_e(xi1) = Omega s3 x 1 + 1 x (xi1 s1 + eta D_y s2) + lam/2 (s1 x s1 + m(y) s2 x s2).

    m(y) switches from -1 (y < 0) to +1 (y > 0); on the torus it is composed
    with a triangle wave so a second, reversed wall sits at y = +-Ly/2.
    """

    params: ModelParams = ModelParams()
    mass: SwitchSpec = DEFAULT_MASS
    xi1: float = 0.0

    def mass_profile(self, y, Ly: float):
        y = (np.asarray(y, dtype=float) + Ly / 2) % Ly - Ly / 2
        tau = np.where(y > Ly / 4, Ly / 2 - y, np.where(y < -Ly / 4, -Ly / 2 - y, y))
        return self.mass(tau)


def edge_window(y, Ly: float):
    """Smooth bump around the physical wall used to tag localisation."""
    return Bump(Ly / 8, Ly / 4)(y)


# ---------------------------------------------------------------- Dirac junction

@dataclass(frozen=True)
class MassPerturbation:
    amplitude: float = 0.25
    sigma_w: float = 5.0
    theta_m: float = 0.0

    def __call__(self, x, y):
        env = np.exp(-(x * x + y * y) / (2 * self.sigma_w**2))
        return -self.amplitude * env * (np.sin(self.theta_m) * x + np.cos(self.theta_m) * y)


@dataclass(frozen=True)
class DiracJunction:
    """H = D_x s1 + D_y s2 + (sign * m(f) + perturbation) s3 (+ scalar potential).

    ``mass_sign=-1`` orients the network so that the left horizontal branch
    carries an incoming mode (the reference orientation for the junction
    experiments); +1 is the literal m(f).
    """

    geom: JunctionGeometry = JunctionGeometry()
    mass: SwitchSpec = DEFAULT_MASS
    mass_sign: int = -1
    perturbation: MassPerturbation | None = None
    potential_amp: float = 0.0
    potential_center: tuple[float, float] = (0.0, 0.0)
    potential_radius: tuple[float, float] = (3.0, 6.0)

    def mass_field(self, x, y):
        m = self.mass_sign * junction_mass(self.geom, self.mass, x, y)
        if self.perturbation is not None:
            m = m + self.perturbation(x, y)
        return m

    def potential_field(self, x, y):
        if self.potential_amp == 0.0:
            return np.zeros(np.broadcast(x, y).shape)
        cx, cy = self.potential_center
        r = np.hypot(np.asarray(x) - cx, np.asarray(y) - cy)
        return self.potential_amp * Bump(*self.potential_radius)(r)


# ---------------------------------------------------------------- valley models

@dataclass(frozen=True)
class EffectivePotential:
    """Two-scale V(x, X) = V0 chi(x) xi(y) cos(omega X) and its valley harmonics."""

    V0: float = 0.1
    omega: float = 2.0
    eps: float = 1.0
    chi: Bump = Bump(10.0, 20.0)
    xi: Bump | None = None  # y-envelope; None means 1D

    @property
    def is_2d(self) -> bool:
        return self.xi is not None

    def envelope(self, x, y=None):
        e = self.V0 * self.chi(x)
        if self.xi is not None and y is not None:
            e = e * self.xi(y)
        return e

    def v_hat0(self, x, y=None):
        return np.zeros(np.broadcast(x, 0.0 if y is None else y).shape)

    def v_hat2(self, x, y=None):
        """V^(x, +-2): the cos(2X) harmonic has weight 1/2 on each side."""
        return 0.5 * self.envelope(x, y)

    def two_scale(self, x):
        return self.envelope(x) * np.cos(self.omega * np.asarray(x) / self.eps)


ValleyKind = Literal["H2", "H2eps", "H4"]


@dataclass(frozen=True)
class ValleyModel:
    """Two-valley models; valley + occupies the leading block.

    ``phi_prime`` = (Phi'(1), Phi'(-1)); the drift of valley +- is -Phi'(+-1) D_x.
    The default (-1, 1) makes valley + right-moving.  ``wall_slope`` is the
    slope of the y mass term of H4 at y = 0; negative slope binds the zero mode
    with sigma_1 = +1 so that H4 reduces to +H2 on that channel.
    """

    kind: ValleyKind = "H2eps"
    potential: EffectivePotential = EffectivePotential()
    phi_prime: tuple[float, float] = (-1.0, 1.0)
    wall_slope: float = -1.0
    energy: float = 0.0

    def __post_init__(self):
        if self.kind not in ("H2", "H2eps", "H4"):
            raise ModelError(f"unknown valley model {self.kind!r}")
        if self.kind == "H4" and not self.potential.is_2d:
            raise ModelError("H4 needs a 2D effective potential (xi envelope)")

    @property
    def drift(self) -> tuple[float, float]:
        return (-self.phi_prime[0], -self.phi_prime[1])

    @property
    def components(self) -> int:
        return 4 if self.kind == "H4" else 2

    def y_mass(self, y, Ly: float):
        return self.wall_slope * Ly / (2 * np.pi) * np.sin(2 * np.pi * np.asarray(y) / Ly)

    def coupling(self, x, y=None):
        """Off-diagonal (1,2) coefficient and the diagonal coefficient."""
        pot = self.potential
        if self.kind == "H2eps":
            v = pot.two_scale(x)
            return v * np.exp(-2j * np.asarray(x) / pot.eps), v.astype(complex)
        return pot.v_hat2(x, y).astype(complex), pot.v_hat0(x, y).astype(complex)


def valley_symbols(model: ValleyModel, x, k, y=None, ky=0.0, Ly: float | None = None):
    """Pointwise symbol with D_x -> k (and D_y -> ky for H4)."""
    off, diag = model.coupling(x, y)
    d1, d2 = model.drift
    h2 = np.array([[d1 * k + diag, off], [np.conj(off), d2 * k + diag]], dtype=complex)
    h2 = h2 - model.energy * np.eye(2)
    if model.kind != "H4":
        return h2
    if y is None or Ly is None:
        raise ModelError("H4 symbol needs y and Ly")
    m = model.y_mass(y, Ly)
    h = np.kron(np.eye(2), ky * SIGMA2 + m * SIGMA3) + np.kron(h2 + model.energy * np.eye(2), SIGMA1)
    return h - model.energy * np.eye(4)
