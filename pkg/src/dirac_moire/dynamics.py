"""Wavepackets on the Dirac junction: preparation, propagation, branch weights.

Propagation is spectral synthesis over a (windowed) decomposition: a packet
built inside the span of the decomposition evolves exactly there.  A Strang
splitting stepper on the collocation grid is kept as an independent check.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .fourier import AssembledOperator, FourierGrid, SpectralDecomposition, assemble, diagonalize
from .model import Bump, DiracJunction, JunctionGeometry, MassPerturbation, SwitchSpec
from .transport import JunctionRun, commutator_elements, junction_conductivity

# incoming rays carry modes towards the centre for the reference orientation
INCOMING = (np.pi, np.pi / 3, -np.pi / 3)
OUTGOING = (2 * np.pi / 3, 0.0, -2 * np.pi / 3)


class ProjectionError(ValueError):
    """The packet has no weight on the selected states."""


@dataclass
class Wavepacket:
    coeffs: np.ndarray  # in the spectral basis of the grid
    time: float
    norm0: float
    grid: FourierGrid
    components: int = 2
    info: dict = field(default_factory=dict)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def density(self, samples=None) -> np.ndarray:
        """|psi|^2 summed over components, shape (My, Mx)."""
        psi = self.grid.to_real_space(self.coeffs, self.components, samples)
        return (np.abs(psi) ** 2).sum(axis=0)


def _centered_mesh(grid: FourierGrid):
    X, Y = grid.mesh()
    return X - grid.lengths[0] / 2, Y - grid.lengths[1] / 2


def raw_edge_packet(model: DiracJunction, grid: FourierGrid, center=(-25.0, 0.0), width: float = 5.0,
                    heading: float = 0.0, span: float = 15.0) -> np.ndarray:
    """Gaussian along the interface through ``center`` (direction ``heading``) times the
    transverse zero mode exp(s int m dn) and the s-eigenspinor of s . e.

    Returns unnormalized spectral coefficients and the propagation sign s.
    """
    X, Y = _centered_mesh(grid)
    e = np.array([np.cos(heading), np.sin(heading)])
    nu = np.array([-e[1], e[0]])
    t = (X - center[0]) * e[0] + (Y - center[1]) * e[1]
    n = (X - center[0]) * nu[0] + (Y - center[1]) * nu[1]
    # transverse integral of the mass along the normal line through the centre
    ns = np.linspace(-span, span, 4001)
    m = model.mass_field(center[0] + ns * nu[0], center[1] + ns * nu[1])
    I = np.concatenate([[0.0], np.cumsum(0.5 * (m[1:] + m[:-1]) * np.diff(ns))])
    I -= np.interp(0.0, ns, I)
    s = -1.0 if I[-1] > 0 else 1.0
    prof = np.exp(s * np.interp(n, ns, I))
    prof = np.where(np.abs(n) <= span, prof, 0.0)
    env = np.exp(-t * t / (2 * width * width)) * prof
    spinor = np.array([1.0, s * np.exp(1j * heading)]) / np.sqrt(2)
    field_ = spinor[:, None, None] * env[None]
    return grid.from_real_space(field_), s


def local_velocities(op: AssembledOperator, V: np.ndarray, center, heading: float,
                     delta: float = 2.0, radius: float = 8.0) -> np.ndarray:
    """<u_j| Q i[H, P] |u_j> with P a switch along ``heading`` at ``center`` and Q a window."""
    grid = op.grid
    X, Y = _centered_mesh(grid)
    e = np.array([np.cos(heading), np.sin(heading)])
    t = (X - center[0]) * e[0] + (Y - center[1]) * e[1]
    r = np.hypot(X - center[0], Y - center[1])
    p = SwitchSpec(0.0, 1.0, -delta, delta)(t)
    q = Bump(radius, 1.5 * radius)(r)
    m = commutator_elements(op, V, op.block_multiplication(p), op.block_multiplication(q))
    return m.real


def edge_packet(op: AssembledOperator, sd: SpectralDecomposition, center=(-25.0, 0.0), width: float = 5.0,
                direction: int = 1, heading: float | None = None, gap: float = 0.9) -> Wavepacket:
    """Project the raw edge packet on in-gap eigenstates whose local velocity has sign ``direction``.

    ``heading`` defaults to the direction from ``center`` towards the junction.
    """
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    if heading is None:
        heading = float(np.arctan2(-center[1], -center[0]))
    raw, s = raw_edge_packet(_model_of(op), op.grid, center, width, heading)
    sel = np.abs(sd.eigenvalues) < gap
    if not sel.any():
        raise ProjectionError("no eigenstates inside the gap window")
    V = sd.eigenvectors[:, sel]
    v = local_velocities(op, V, center, heading)
    keep = np.sign(v) == direction
    if not keep.any():
        raise ProjectionError("no in-gap states with the requested velocity sign")
    c = V[:, keep].conj().T @ raw
    raw_norm = np.linalg.norm(raw)
    psi = V[:, keep] @ c
    nrm = np.linalg.norm(psi)
    if nrm < 1e-12 * max(raw_norm, 1e-300):
        raise ProjectionError("projection of the packet is empty")
    info = {"retained": float(nrm / raw_norm), "propagation_sign": s, "n_states": int(keep.sum()),
            "center": tuple(center), "width": width, "direction": direction}
    return Wavepacket(psi / nrm, 0.0, 1.0, op.grid, op.components, info)


def _model_of(op: AssembledOperator) -> DiracJunction:
    m = op.model_tag.get("model_obj")
    if not isinstance(m, DiracJunction):
        raise ValueError("operator was not assembled from a DiracJunction (use assemble_junction)")
    return m


def assemble_junction(model: DiracJunction, grid: FourierGrid) -> AssembledOperator:
    op = assemble(model, grid)
    op.model_tag["model_obj"] = model
    return op


def spectral_coverage(sd: SpectralDecomposition, psi: Wavepacket) -> float:
    """Fraction of ||psi||^2 inside span(sd)."""
    c = sd.eigenvectors.conj().T @ psi.coeffs
    return float(np.vdot(c, c).real / max(np.vdot(psi.coeffs, psi.coeffs).real, 1e-300))


def propagate(sd: SpectralDecomposition, psi: Wavepacket, t: float, tol: float = 1e-10) -> Wavepacket:
    """psi(t) = sum_j exp(-i lambda_j t) <u_j, psi> u_j."""
    c = sd.eigenvectors.conj().T @ psi.coeffs
    missing = 1.0 - np.vdot(c, c).real / max(np.vdot(psi.coeffs, psi.coeffs).real, 1e-300)
    if missing > tol:
        raise ValueError(f"decomposition misses {missing:.2e} of the packet's spectral mass")
    out = sd.eigenvectors @ (np.exp(-1j * sd.eigenvalues * t) * c)
    return Wavepacket(out, psi.time + t, psi.norm0, psi.grid, psi.components, dict(psi.info))


def energy(op: AssembledOperator, psi: Wavepacket) -> float:
    return float(np.vdot(psi.coeffs, op.matrix @ psi.coeffs).real / np.vdot(psi.coeffs, psi.coeffs).real)


def current(op: AssembledOperator, psi: Wavepacket, heading: float = 0.0) -> float:
    """Current through a switch along ``heading`` at the packet centre."""
    center = psi.info.get("center", (0.0, 0.0))
    return float(local_velocities(op, psi.coeffs[:, None], center, heading)[0])


# ---------------------------------------------------------------- branch diagnostics

@dataclass
class BranchWeights:
    angles: np.ndarray
    weights: np.ndarray
    residue: float

    def weight(self, angle: float) -> float:
        d = np.abs(np.angle(np.exp(1j * (self.angles - angle))))
        return float(self.weights[np.argmin(d)])

    def outgoing(self) -> dict:
        return {a: self.weight(a) for a in OUTGOING}

    def dominant_outgoing(self) -> float:
        o = self.outgoing()
        return max(o, key=o.get)


def branch_weights(psi: Wavepacket, geom: JunctionGeometry = JunctionGeometry(), r_min: float = 10.0,
                   half_width: float = np.pi / 18, r_max: float | None = None) -> BranchWeights:
    """|psi|^2 in the angular tubes around each interface ray, beyond r_min."""
    grid = psi.grid
    X, Y = _centered_mesh(grid)
    r = np.hypot(X, Y)
    th = np.arctan2(Y, X)
    if r_max is None:
        r_max = min(grid.lengths) / 2
    rho = psi.density()
    total = rho.sum()
    angles = np.angle(np.exp(1j * geom.interface_angles()))
    w = np.zeros(angles.size)
    for i, a in enumerate(angles):
        d = np.abs(np.angle(np.exp(1j * (th - a))))
        mask = (d < half_width) & (r > r_min) & (r < r_max)
        w[i] = rho[mask].sum() / total
    return BranchWeights(angles, w, float(1.0 - w.sum()))


def second_moments(psi: Wavepacket) -> tuple[float, float, float]:
    """(<x>, <y>, spread) of |psi|^2 in centred coordinates."""
    X, Y = _centered_mesh(psi.grid)
    rho = psi.density()
    rho = rho / rho.sum()
    mx, my = (rho * X).sum(), (rho * Y).sum()
    return float(mx), float(my), float(np.sqrt((rho * ((X - mx) ** 2 + (Y - my) ** 2)).sum()))


# ---------------------------------------------------------------- steering

@dataclass
class SteerResult:
    theta_m: float
    weights: BranchWeights
    two_pi_sigma: float | None
    packet: Wavepacket


def steer(theta_m: float | None, run: JunctionRun = JunctionRun(N=32), t: float = 50.0,
          amplitude: float = 0.25, sigma_w: float = 5.0, center=(-25.0, 0.0), width: float = 5.0,
          with_conductivity: bool = True, solved=None) -> SteerResult:
    """Propagate the edge packet through the junction with mass perturbation theta_m
    (None or amplitude 0: symmetric junction)."""
    pert = None if theta_m is None or amplitude == 0 else MassPerturbation(amplitude, sigma_w, float(theta_m))
    model = replace(run.model, perturbation=pert)
    if solved is None:
        op = assemble_junction(model, run.grid)
        sd = diagonalize(op, window=(-run.E0 * 1.02, run.E0 * 1.02))
    else:
        op, sd = solved
    psi0 = edge_packet(op, sd, center, width)
    psi = propagate(sd, psi0, t)
    sig = None
    if with_conductivity:
        sig = junction_conductivity(op, sd, run.Lx / 2, run.delta, run.E0).two_pi_sigma
    return SteerResult(np.nan if theta_m is None else float(theta_m), branch_weights(psi, model.geom),
                       sig, psi)


# ---------------------------------------------------------------- splitting oracle

def strang_propagate(model: DiracJunction, lengths, samples, psi0: np.ndarray, t: float, steps: int) -> np.ndarray:
    """Strang splitting on a collocation grid of ``samples`` points per direction.

    psi0 has shape (2, My, Mx) on the nodes j L / M (centred coordinates are
    used for the model).  Kinetic half-steps are exact in Fourier space; the
    mass step is exact pointwise.
    """
    Lx, Ly = lengths
    Mx, My = samples
    x = np.arange(Mx) * Lx / Mx - Lx / 2
    y = np.arange(My) * Ly / My - Ly / 2
    X, Y = np.meshgrid(x, y, indexing="xy")
    m = model.mass_field(X, Y)
    V = model.potential_field(X, Y)
    kx = 2 * np.pi * np.fft.fftfreq(Mx, Lx / Mx)
    ky = 2 * np.pi * np.fft.fftfreq(My, Ly / My)
    KX, KY = np.meshgrid(kx, ky, indexing="xy")
    k = np.hypot(KX, KY)
    dt = t / steps
    # exp(-i dt/2 (kx s1 + ky s2)) = cos(k dt/2) - i sin(k dt/2) (kx s1 + ky s2)/k
    c = np.cos(0.5 * k * dt)
    sk = np.where(k > 0, np.sin(0.5 * k * dt) / np.where(k > 0, k, 1.0), 0.5 * dt)
    off_up = -1j * sk * (KX - 1j * KY)
    off_dn = -1j * sk * (KX + 1j * KY)
    # exp(-i dt (m s3 + V))
    em = np.exp(-1j * dt * V)
    ph_up, ph_dn = em * np.exp(-1j * dt * m), em * np.exp(1j * dt * m)

    def kinetic(u):
        a = np.fft.fft2(u[0])
        b = np.fft.fft2(u[1])
        return np.stack([np.fft.ifft2(c * a + off_up * b), np.fft.ifft2(off_dn * a + c * b)])

    u = np.asarray(psi0, dtype=complex)
    for _ in range(steps):
        u = kinetic(u)
        u = np.stack([ph_up * u[0], ph_dn * u[1]])
        u = kinetic(u)
    return u


def collocation_hamiltonian(model: DiracJunction, lengths, samples) -> np.ndarray:
    """Dense Fourier-collocation matrix of the same operator (oracle for the stepper)."""
    Lx, Ly = lengths
    Mx, My = samples
    x = np.arange(Mx) * Lx / Mx - Lx / 2
    y = np.arange(My) * Ly / My - Ly / 2
    X, Y = np.meshgrid(x, y, indexing="xy")
    Ix, Iy = np.eye(Mx), np.eye(My)
    kx = 2 * np.pi * np.fft.fftfreq(Mx, Lx / Mx)
    ky = 2 * np.pi * np.fft.fftfreq(My, Ly / My)
    Dx1 = np.fft.ifft(kx[:, None] * np.fft.fft(Ix, axis=0), axis=0)
    Dy1 = np.fft.ifft(ky[:, None] * np.fft.fft(Iy, axis=0), axis=0)
    Dx = np.kron(Iy, Dx1)
    Dy = np.kron(Dy1, Ix)
    m = np.diag(model.mass_field(X, Y).ravel())
    V = np.diag(model.potential_field(X, Y).ravel())
    H = np.block([[m + V, Dx - 1j * Dy], [Dx + 1j * Dy, -m + V]])
    return 0.5 * (H + H.conj().T)
