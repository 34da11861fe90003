"""Interface / junction conductivities by the sum-over-states trace.

    2 pi sigma~ = 2 pi sum_j phi'(lambda_j) <u_j | Q i[H, P] | u_j>

P is a smooth spatial switch whose transition crosses the interface network,
Q masks the artificial walls created by periodisation.  Both are built as
products of one-dimensional switches (the smooth version of a max / min of
half-plane indicators), so they are exactly 0 or 1 away from their transition
bands and have closed-form gradients.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Literal, Sequence

import numpy as np
from scipy.integrate import quad

from .fourier import (
    AssembledOperator, FourierGrid, SpectralDecomposition, assemble, diagonalize, make_grid,
    multiplication_operator,
)
from .model import DiracJunction, ModelError, SwitchSpec, ValleyModel

FilterKind = Literal["edge_1d", "junction_p", "mask_q", "rotated_p"]


class CoverageError(ValueError):
    """The decomposition does not contain every state weighted by phi'."""


# ---------------------------------------------------------------- density weight

@lru_cache(maxsize=None)
def _bump_integral() -> float:
    val, _ = quad(lambda t: np.exp(-1.0 / (1.0 - t * t)), -1.0, 1.0, epsabs=1e-14, epsrel=1e-14)
    return val


@dataclass(frozen=True)
class DensityWeight:
    """phi'(E) = c exp(-1/(1-((E-center)/E0)^2)) on |E - center| < E0, unit integral."""

    E0: float
    center: float = 0.0

    def __post_init__(self):
        if self.E0 <= 0:
            raise ValueError("E0 must be positive")

    @property
    def support(self) -> tuple[float, float]:
        return (self.center - self.E0, self.center + self.E0)

    def __call__(self, E):
        t = (np.asarray(E, dtype=float) - self.center) / self.E0
        inside = np.abs(t) < 1.0
        tc = np.where(inside, t, 0.0)
        val = np.exp(-1.0 / (1.0 - tc * tc)) / (self.E0 * _bump_integral())
        return np.where(inside, val, 0.0)


# ---------------------------------------------------------------- filters

@dataclass(frozen=True)
class FilterSpec:
    kind: FilterKind = "junction_p"
    x0: float = 50.0
    delta: float = 2.0
    theta: float = np.pi - np.pi / 12
    j: int = 0  # rotation index for rotated_p


@dataclass
class SampledFilter:
    value: np.ndarray
    grad: tuple[np.ndarray, ...]


def _switch(delta: float) -> SwitchSpec:
    return SwitchSpec(0.0, 1.0, -delta, delta)


def _union(parts):
    """p = 1 - prod(1 - s_i): zero iff every s_i is zero, one if any s_i is one."""
    val = np.ones_like(parts[0][0])
    for s, _ in parts:
        val = val * (1.0 - s)
    grads = []
    for axis in range(len(parts[0][1])):
        g = np.zeros_like(val)
        for i, (s, ds) in enumerate(parts):
            others = np.ones_like(val)
            for k, (s2, _) in enumerate(parts):
                if k != i:
                    others = others * (1.0 - s2)
            g = g + ds[axis] * others
        grads.append(g)
    return SampledFilter(1.0 - val, tuple(grads))


def _halfplane(sw: SwitchSpec, F, dF):
    """Switch of an affine function F with constant gradient dF."""
    s = sw(F)
    ds = sw.derivative(F)
    return s, tuple(ds * d for d in dF)


def junction_filter(spec: FilterSpec, X, Y, Lx: float, Ly: float) -> SampledFilter:
    """p = 0 on {x < x0} within the wedge of half-opening pi - theta opening to the left.

    Level functions: x - x0 and -+cos(theta)(y - Ly/2) + sin(theta)(x - x0 - Lx/4).
    """
    sw = _switch(spec.delta)
    c, s = np.cos(spec.theta), np.sin(spec.theta)
    yc = Y - Ly / 2
    parts = [
        _halfplane(sw, X - spec.x0, (1.0, 0.0)),
        _halfplane(sw, -c * yc + s * (X - spec.x0 - Lx / 4), (s, -c)),
        _halfplane(sw, c * yc + s * (X - spec.x0 - Lx / 4), (s, c)),
    ]
    return _union(parts)


def mask_filter(spec: FilterSpec, X, Y, Lx: float, Ly: float) -> SampledFilter:
    """q = 1 on |x - Lx/2| < Lx/4 - delta and |y - Ly/2| < 3Ly/8 - delta."""
    sw = _switch(spec.delta)
    xc, yc = X - Lx / 2, Y - Ly / 2
    parts = [
        _halfplane(sw, xc - Lx / 4, (1.0, 0.0)),
        _halfplane(sw, -xc - Lx / 4, (-1.0, 0.0)),
        _halfplane(sw, yc - 3 * Ly / 8, (0.0, 1.0)),
        _halfplane(sw, -yc - 3 * Ly / 8, (0.0, -1.0)),
    ]
    u = _union(parts)
    return SampledFilter(1.0 - u.value, tuple(-g for g in u.grad))


def rotated_filter(spec: FilterSpec, X, Y, Lx: float, Ly: float) -> SampledFilter:
    """P_j(x, y) = P_0(R_{-2 pi j/3}(x, y)) about the cell centre."""
    a = -2 * np.pi * spec.j / 3
    ca, sa = np.cos(a), np.sin(a)
    xc, yc = X - Lx / 2, Y - Ly / 2
    Xr = ca * xc - sa * yc + Lx / 2
    Yr = sa * xc + ca * yc + Ly / 2
    base = junction_filter(FilterSpec("junction_p", spec.x0, spec.delta, spec.theta), Xr, Yr, Lx, Ly)
    gx, gy = base.grad
    # chain rule: grad P_j = R^T grad P_0
    return SampledFilter(base.value, (ca * gx + sa * gy, -sa * gx + ca * gy))


def edge_filter(spec: FilterSpec, X, L: float) -> SampledFilter:
    """1D p: rises at x0, falls back near the seam (inside the masked zone)."""
    up = SwitchSpec(0.0, 1.0, spec.x0 - spec.delta, spec.x0 + spec.delta)
    down = SwitchSpec(1.0, 0.0, 7 * L / 8, 15 * L / 16)
    val = up(X) * down(X)
    grad = up.derivative(X) * down(X) + up(X) * down.derivative(X)
    return SampledFilter(val, (grad,))


def edge_mask(X, L: float) -> SampledFilter:
    up = SwitchSpec(0.0, 1.0, L / 32, L / 16)
    down = SwitchSpec(1.0, 0.0, 13 * L / 16, 27 * L / 32)
    return SampledFilter(up(X) * down(X), (up.derivative(X) * down(X) + up(X) * down.derivative(X),))


def make_filter(spec: FilterSpec, grid: FourierGrid) -> SampledFilter:
    """Sample a filter and its closed-form gradient on the dealiasing grid."""
    if spec.delta <= 0:
        raise ValueError("delta must be positive")
    if spec.kind == "edge_1d":
        if grid.dims != 1:
            raise ValueError("edge_1d filter needs a 1D grid")
        (X,) = grid.mesh()
        L = grid.lengths[0]
        if not (L / 16 + spec.delta <= spec.x0 <= 13 * L / 16 - spec.delta):
            raise ValueError("edge filter transition must lie inside the masked window")
        return edge_filter(spec, X, L)
    if grid.dims != 2:
        raise ValueError(f"{spec.kind} filter needs a 2D grid")
    X, Y = grid.mesh()
    Lx, Ly = grid.lengths
    if 2 * spec.delta >= min(Lx, Ly) / 8:
        raise ValueError("delta too large for the filter geometry")
    if spec.kind == "junction_p":
        return junction_filter(spec, X, Y, Lx, Ly)
    if spec.kind == "mask_q":
        return mask_filter(spec, X, Y, Lx, Ly)
    if spec.kind == "rotated_p":
        return rotated_filter(spec, X, Y, Lx, Ly)
    raise ValueError(f"unknown filter kind {spec.kind!r}")


def filter_mask(grid: FourierGrid, delta: float = 2.0) -> SampledFilter:
    if grid.dims == 1:
        (X,) = grid.mesh()
        return edge_mask(X, grid.lengths[0])
    return make_filter(FilterSpec("mask_q", delta=delta), grid)


# ---------------------------------------------------------------- trace

@dataclass
class ConductivityResult:
    two_pi_sigma: float
    energies: np.ndarray
    weights: np.ndarray
    elements: np.ndarray  # complex <u_j| Q i[H,P] |u_j>
    provenance: dict = field(default_factory=dict)

    def recompute(self) -> float:
        return float(2 * np.pi * np.sum(self.weights * self.elements.real))

    @property
    def imaginary_residue(self) -> float:
        return float(2 * np.pi * np.sum(self.weights * self.elements.imag))


def _apply_block(block: np.ndarray, V: np.ndarray, ncomp: int) -> np.ndarray:
    n = block.shape[0]
    out = np.empty_like(V)
    for c in range(ncomp):
        out[c * n:(c + 1) * n] = block @ V[c * n:(c + 1) * n]
    return out


def commutator_elements(op: AssembledOperator, V: np.ndarray, p_block: np.ndarray,
                        q_block: np.ndarray | None) -> np.ndarray:
    """<v_j | Q i[H, P] | v_j> with [H, P] formed from the assembled matrices."""
    H = op.matrix
    PV = _apply_block(p_block, V, op.components)
    CV = 1j * (H @ PV - _apply_block(p_block, H @ V, op.components))
    QV = V if q_block is None else _apply_block(q_block, V, op.components)
    return np.einsum("ij,ij->j", QV.conj(), CV)


def conductivity(sd: SpectralDecomposition, op: AssembledOperator, p_field: np.ndarray,
                 q_field: np.ndarray | None, w: DensityWeight) -> ConductivityResult:
    lo, hi = w.support
    if not sd.covers(lo, hi):
        raise CoverageError(f"decomposition window {sd.window} does not cover supp phi' = {w.support}")
    phi = w(sd.eigenvalues)
    sel = phi > 0
    V = sd.eigenvectors[:, sel]
    p_block = multiplication_operator(op.grid, p_field)
    q_block = None if q_field is None else multiplication_operator(op.grid, q_field)
    m = commutator_elements(op, V, p_block, q_block)
    res = ConductivityResult(0.0, sd.eigenvalues[sel], phi[sel], m,
                             {**sd.provenance, "E0": w.E0, "n_states": int(sel.sum())})
    res.two_pi_sigma = res.recompute()
    return res


def dirac_commutator_oracle(grid: FourierGrid, p: "SampledFilter") -> np.ndarray:
    """i[H, P] for the 2x2 Dirac operator: [[0, px - i py], [px + i py, 0]]."""
    px, py = p.grad
    off_up = multiplication_operator(grid, px - 1j * py)
    off_dn = multiplication_operator(grid, px + 1j * py)
    n = grid.n_modes
    C = np.zeros((2 * n, 2 * n), dtype=complex)
    C[:n, n:] = off_up
    C[n:, :n] = off_dn
    return C


# ---------------------------------------------------------------- junction experiments

@dataclass(frozen=True)
class JunctionRun:
    """Dirac junction on an Lx x Ly torus with K = N modes per direction."""

    N: int = 16
    Lx: float = 100.0
    Ly: float = 100.0
    model: DiracJunction = DiracJunction()
    delta: float = 2.0
    E0: float = 0.9

    @property
    def grid(self) -> FourierGrid:
        return make_grid(2, (self.Lx, self.Ly), (self.N, self.N))


def solve_junction(run: JunctionRun, window_scale: float = 1.02):
    grid = run.grid
    op = assemble(run.model, grid)
    E = run.E0 * window_scale
    sd = diagonalize(op, window=(-E, E))
    # lets the wavepacket helpers recover the continuous model (kept out of the provenance)
    op.model_tag["model_obj"] = run.model
    return op, sd


def junction_conductivity(op: AssembledOperator, sd: SpectralDecomposition, x0: float,
                          delta: float = 2.0, E0: float = 0.9, kind: FilterKind = "junction_p",
                          j: int = 0, theta: float = np.pi - np.pi / 12) -> ConductivityResult:
    spec = FilterSpec(kind, x0, delta, theta, j)
    p = make_filter(spec, op.grid)
    q = filter_mask(op.grid, delta)
    return conductivity(sd, op, p.value, q.value, DensityWeight(E0))


def junction_table(x0_fracs: Sequence[float], N_list: Sequence[int], base: JunctionRun = JunctionRun()):
    """{(x0_frac, N): 2 pi sigma~} for x0 = frac * Lx."""
    out = {}
    for N in N_list:
        run = JunctionRun(N, base.Lx, base.Ly, base.model, base.delta, base.E0)
        op, sd = solve_junction(run)
        for fr in x0_fracs:
            out[(fr, N)] = junction_conductivity(op, sd, fr * run.Lx, run.delta, run.E0).two_pi_sigma
        del op, sd
    return out


# ---------------------------------------------------------------- valley conductivity

def _y_mask(Y, Ly: float) -> np.ndarray:
    """1 near the wall at Ly/2, 0 near the wall of opposite chirality at the seam."""
    up = SwitchSpec(0.0, 1.0, Ly / 8, Ly / 4)
    down = SwitchSpec(1.0, 0.0, 3 * Ly / 4, 7 * Ly / 8)
    return up(Y) * down(Y)


def valley_filters(grid: FourierGrid, x0: float, delta: float = 2.0):
    """(p, q) sampled fields for the valley models; for 2D grids p depends on x only."""
    if grid.dims == 1:
        return make_filter(FilterSpec("edge_1d", x0, delta), grid).value, filter_mask(grid).value
    X, Y = grid.mesh()
    Lx, Ly = grid.lengths
    if not (Lx / 16 + delta <= x0 <= 13 * Lx / 16 - delta):
        raise ValueError("edge filter transition must lie inside the masked window")
    p = edge_filter(FilterSpec("edge_1d", x0, delta), X, Lx).value
    q = edge_mask(X, Lx).value * _y_mask(Y, Ly)
    return p, q


def valley_conductivity(sd: SpectralDecomposition, op: AssembledOperator, p_field: np.ndarray,
                        q_field: np.ndarray | None, w: DensityWeight, valley: int = 1) -> ConductivityResult:
    """2 pi Tr Q i[H_vv, P] phi'_vv(H), restricted to the rows/columns of one valley block."""
    blocks = op.model_tag.get("valley_blocks") if isinstance(op.model_tag, dict) else None
    if blocks is None:
        raise ModelError("operator carries no valley block tagging")
    if valley not in (1, -1):
        raise ValueError("valley must be +1 or -1")
    lo, hi = w.support
    if not sd.covers(lo, hi):
        raise CoverageError(f"decomposition window {sd.window} does not cover supp phi' = {w.support}")
    n = op.grid.n_modes
    per = op.components // 2
    start = blocks[0 if valley == 1 else 1] * n
    sl = slice(start, start + per * n)
    phi = w(sd.eigenvalues)
    sel = phi > 0
    V = sd.eigenvectors[sl][:, sel]
    Hvv = op.matrix[sl, sl]
    p_block = multiplication_operator(op.grid, p_field)
    PV = _apply_block(p_block, V, per)
    CV = 1j * (Hvv @ PV - _apply_block(p_block, Hvv @ V, per))
    QV = V if q_field is None else _apply_block(multiplication_operator(op.grid, q_field), V, per)
    m = np.einsum("ij,ij->j", QV.conj(), CV)
    res = ConductivityResult(0.0, sd.eigenvalues[sel], phi[sel], m,
                             {**sd.provenance, "E0": w.E0, "valley": valley, "n_states": int(sel.sum())})
    res.two_pi_sigma = res.recompute()
    return res


@dataclass(frozen=True)
class ValleyRun:
    """Valley model on [0, L) (centered coordinates [-L/2, L/2)); Ly, Ky used by H4 only."""

    model: ValleyModel = ValleyModel()
    L: float = 100.0
    K: int = 128
    Ly: float = 20.0
    Ky: int = 16
    x0: float = 50.0
    delta: float = 2.0
    E0: float = 0.16

    @property
    def grid(self) -> FourierGrid:
        if self.model.kind == "H4":
            return make_grid(2, (self.L, self.Ly), (self.K, self.Ky))
        return make_grid(1, (self.L,), (self.K,))


def valley_pair(run: ValleyRun, op=None, sd=None) -> tuple[float, float]:
    """(sigma_{I,+}, sigma_{I,-}) for one run."""
    if op is None:
        op = assemble(run.model, run.grid)
    if sd is None:
        E = run.E0 * 1.02
        sd = diagonalize(op, window=(-E, E))
    p, q = valley_filters(op.grid, run.x0, run.delta)
    w = DensityWeight(run.E0)
    return (valley_conductivity(sd, op, p, q, w, 1).two_pi_sigma,
            valley_conductivity(sd, op, p, q, w, -1).two_pi_sigma)


def omega_sweep(base: ValleyRun, omegas: Sequence[float], x0_list: Sequence[float] | None = None):
    """{(omega, x0): sigma_{I,+}} for the two-scale model."""
    out = {}
    for om in omegas:
        pot = replace(base.model.potential, omega=float(om))
        run = replace(base, model=replace(base.model, potential=pot))
        op = assemble(run.model, run.grid)
        sd = diagonalize(op, window=(-1.02 * run.E0, 1.02 * run.E0))
        for x0 in (x0_list if x0_list is not None else [base.x0]):
            r = replace(run, x0=float(x0))
            out[(float(om), float(x0))] = valley_pair(r, op, sd)[0]
    return out


def energy_sweep(base: ValleyRun, V0_list: Sequence[float], E_list: Sequence[float]) -> np.ndarray:
    """sigma_{I,+}(V0, E) with H -> H - E; shape (len(V0_list), len(E_list))."""
    out = np.zeros((len(V0_list), len(E_list)))
    for i, V0 in enumerate(V0_list):
        pot = replace(base.model.potential, V0=float(V0))
        for j, E in enumerate(E_list):
            run = replace(base, model=replace(base.model, potential=pot, energy=float(E)))
            out[i, j] = valley_pair(run)[0]
    return out
