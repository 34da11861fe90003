"""Pseudo-spectral discretisation on periodic 1D/2D cells.

Basis functions are e^{2 i pi k x / L} with |k| <= K per dimension; vectors are
ordered row-major over (component, ky, kx).  Multiplication operators are the
Galerkin truncation of the product evaluated on a real-space grid of 3(K+1)
points per dimension.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg

from .model import (
    SIGMA0, SIGMA1, SIGMA2, SIGMA3,
    DiracJunction, EdgeModel, ModelError, ModelParams, SwitchSpec, ValleyModel,
    edge_window,
)


class SolverError(RuntimeError):
    """Eigensolver failure, carrying the operator provenance."""


@dataclass(frozen=True)
class FourierGrid:
    lengths: tuple[float, ...]
    cutoffs: tuple[int, ...]

    def __post_init__(self):
        if len(self.lengths) != len(self.cutoffs) or len(self.lengths) not in (1, 2):
            raise ValueError("grid must be 1D or 2D with matching lengths/cutoffs")
        if any(L <= 0 for L in self.lengths) or any(K < 1 for K in self.cutoffs):
            raise ValueError("lengths must be positive and cutoffs >= 1")

    @property
    def dims(self) -> int:
        return len(self.lengths)

    @property
    def sample_counts(self) -> tuple[int, ...]:
        return tuple(3 * (K + 1) for K in self.cutoffs)

    @property
    def n_modes(self) -> int:
        return int(np.prod([2 * K + 1 for K in self.cutoffs]))

    def modes(self, axis: int) -> np.ndarray:
        K = self.cutoffs[axis]
        return np.arange(-K, K + 1)

    def wavenumbers(self, axis: int) -> np.ndarray:
        return 2 * np.pi * self.modes(axis) / self.lengths[axis]

    def nodes(self, axis: int) -> np.ndarray:
        M = self.sample_counts[axis]
        return np.arange(M) * (self.lengths[axis] / M)

    def mesh(self):
        """Sample nodes; 2D arrays have shape (My, Mx)."""
        if self.dims == 1:
            return (self.nodes(0),)
        X, Y = np.meshgrid(self.nodes(0), self.nodes(1), indexing="xy")
        return X, Y

    def mode_mesh(self):
        """Mode coordinates flattened in (ky, kx) row-major order."""
        if self.dims == 1:
            return (self.wavenumbers(0),)
        KX, KY = np.meshgrid(self.wavenumbers(0), self.wavenumbers(1), indexing="xy")
        return KX.ravel(), KY.ravel()

    def to_real_space(self, coeffs: np.ndarray, ncomp: int = 1, samples: Sequence[int] | None = None):
        """Evaluate spectral vectors on a uniform grid (default: the dealiasing grid)."""
        M = tuple(samples) if samples is not None else self.sample_counts
        c = np.asarray(coeffs).reshape((ncomp,) + tuple(2 * K + 1 for K in reversed(self.cutoffs)))
        full = np.zeros((ncomp,) + tuple(reversed(M)), dtype=complex)
        idx = tuple(np.arange(-K, K + 1) % m for K, m in zip(reversed(self.cutoffs), reversed(M)))
        full[(slice(None),) + np.ix_(*idx)] = c
        axes = tuple(range(1, self.dims + 1))
        norm = np.sqrt(np.prod(self.lengths))
        return np.fft.ifftn(full, axes=axes) * np.prod(M) / norm

    def from_real_space(self, samples: np.ndarray) -> np.ndarray:
        """Spectral coefficients (ncomp * n_modes,) of fields sampled on the dealiasing grid.

        ``samples`` has shape (ncomp, My, Mx) (or (ncomp, M) in 1D); exact for
        band-limited fields, the discrete projection otherwise.
        """
        M = self.sample_counts
        s = np.asarray(samples)
        axes = tuple(range(1, self.dims + 1))
        full = np.fft.fftn(s, axes=axes) * np.sqrt(np.prod(self.lengths)) / np.prod(M)
        idx = tuple(np.arange(-K, K + 1) % m for K, m in zip(reversed(self.cutoffs), reversed(M)))
        return full[(slice(None),) + np.ix_(*idx)].reshape(-1)


def make_grid(dims: int, lengths, cutoffs) -> FourierGrid:
    lengths = tuple(float(v) for v in np.atleast_1d(lengths))
    cutoffs = tuple(int(v) for v in np.atleast_1d(cutoffs))
    if len(lengths) != dims or len(cutoffs) != dims:
        raise ValueError(f"expected {dims} lengths and cutoffs")
    return FourierGrid(lengths, cutoffs)


def multiplication_operator(grid: FourierGrid, field_samples: np.ndarray) -> np.ndarray:
    """Dense block M with M[k, l] = c~[(k - l) mod 3(K+1)] (dealiased Galerkin product)."""
    c = np.asarray(field_samples)
    M = grid.sample_counts
    if c.shape != tuple(reversed(M)):
        raise ValueError(f"field must be sampled on shape {tuple(reversed(M))}, got {c.shape}")
    ch = np.fft.fftn(c) / np.prod(M)
    if not np.iscomplexobj(c):
        # enforce exact conjugate symmetry so the block is exactly Hermitian
        flip = ch[np.ix_(*((-np.arange(m)) % m for m in ch.shape))]
        ch = 0.5 * (ch + flip.conj())
    if grid.dims == 1:
        k = grid.modes(0)
        return ch[(k[:, None] - k[None, :]) % M[0]]
    kx, ky = grid.modes(0), grid.modes(1)
    dx = (kx[:, None] - kx[None, :]) % M[0]
    dy = (ky[:, None] - ky[None, :]) % M[1]
    n = grid.n_modes
    block = ch[dy[:, None, :, None], dx[None, :, None, :]]
    return block.reshape(n, n)


def derivative_operator(grid: FourierGrid, axis: int) -> np.ndarray:
    """Diagonal of D = -i d/dx_axis in the spectral ordering."""
    return grid.mode_mesh()[axis].astype(float)


# ---------------------------------------------------------------- assembly

@dataclass
class Term:
    """spin (n x n) tensor a spatial operator: 'dx', 'dy', or a sampled field."""

    spin: np.ndarray
    kind: str  # "dx", "dy", "mul"
    field: np.ndarray | None = None


@dataclass
class AssembledOperator:
    grid: FourierGrid
    components: int
    matrix: np.ndarray
    model_tag: dict = field(default_factory=dict)
    terms: list = field(default_factory=list, repr=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def hermiticity_error(self) -> float:
        H = self.matrix
        return float(np.linalg.norm(H - H.conj().T) / max(np.linalg.norm(H), 1e-300))

    def block_multiplication(self, field_samples: np.ndarray) -> np.ndarray:
        """Scalar multiplication block for this grid (acts identically on every component)."""
        return multiplication_operator(self.grid, field_samples)


def assemble_terms(grid: FourierGrid, terms: Sequence[Term], ncomp: int, tag: dict | None = None) -> AssembledOperator:
    n = grid.n_modes
    H = np.zeros((ncomp * n, ncomp * n), dtype=complex)
    for t in terms:
        if t.kind in ("dx", "dy"):
            d = derivative_operator(grid, 0 if t.kind == "dx" else 1)
            block = None
        elif t.kind == "mul":
            block = multiplication_operator(grid, t.field)
        else:
            raise ValueError(f"unknown term kind {t.kind!r}")
        for a in range(ncomp):
            for b in range(ncomp):
                s = t.spin[a, b]
                if s == 0:
                    continue
                view = H[a * n:(a + 1) * n, b * n:(b + 1) * n]
                if block is None:
                    view[np.diag_indices(n)] += s * d
                else:
                    view += s * block
    return AssembledOperator(grid, ncomp, H, dict(tag or {}), list(terms))


def _centered(grid: FourierGrid):
    mesh = grid.mesh()
    return tuple(m - L / 2 for m, L in zip(mesh, grid.lengths))


def model_terms(model, grid: FourierGrid) -> tuple[list[Term], int]:
    """Spectral terms of a model object from :mod:`dirac_moire.model`."""
    if isinstance(model, DiracJunction):
        if grid.dims != 2:
            raise ModelError("Dirac junction needs a 2D grid")
        X, Y = _centered(grid)
        terms = [Term(SIGMA1, "dx"), Term(SIGMA2, "dy"), Term(SIGMA3, "mul", model.mass_field(X, Y))]
        if model.potential_amp:
            terms.append(Term(SIGMA0, "mul", model.potential_field(X, Y)))
        return terms, 2
    if isinstance(model, EdgeModel):
        if grid.dims != 1:
            raise ModelError("edge model at fixed xi1 needs a 1D grid in y")
        p = model.params
        (Y,) = _centered(grid)
        m = model.mass_profile(Y, grid.lengths[0])
        const = p.omega * np.kron(SIGMA3, SIGMA0) + model.xi1 * np.kron(SIGMA0, SIGMA1) \
            + 0.5 * p.lam * np.kron(SIGMA1, SIGMA1)
        terms = [
            Term(const, "mul", np.ones_like(Y)),
            Term(p.eta * np.kron(SIGMA0, SIGMA2), "dx"),
            Term(0.5 * p.lam * np.kron(SIGMA2, SIGMA2), "mul", m),
        ]
        return terms, 4
    if isinstance(model, ValleyModel):
        return _valley_terms(model, grid)
    raise ModelError(f"no assembly rule for {type(model).__name__}")


def _valley_terms(model: ValleyModel, grid: FourierGrid):
    E12 = np.array([[0, 1], [0, 0]], dtype=complex)
    P1 = np.diag([1.0, 0.0]).astype(complex)
    P2 = np.diag([0.0, 1.0]).astype(complex)
    d1, d2 = model.drift
    if model.kind in ("H2", "H2eps"):
        if grid.dims != 1:
            raise ModelError(f"{model.kind} needs a 1D grid")
        (X,) = _centered(grid)
        off, diag = model.coupling(X)
        terms = [
            Term(d1 * P1 + d2 * P2, "dx"),
            Term(SIGMA0, "mul", diag - model.energy),
            Term(E12, "mul", off),
            Term(E12.T.copy(), "mul", np.conj(off)),
        ]
        return terms, 2
    if grid.dims != 2:
        raise ModelError("H4 needs a 2D grid")
    X, Y = _centered(grid)
    off, diag = model.coupling(X, Y)
    Ly = grid.lengths[1]
    terms = [
        Term(np.kron(d1 * P1 + d2 * P2, SIGMA1), "dx"),
        Term(np.kron(SIGMA0, SIGMA2), "dy"),
        Term(np.kron(SIGMA0, SIGMA3), "mul", model.y_mass(Y, Ly)),
        Term(np.kron(SIGMA0, SIGMA1), "mul", diag),
        Term(np.kron(E12, SIGMA1), "mul", off),
        Term(np.kron(E12.T, SIGMA1), "mul", np.conj(off)),
        Term(np.eye(4, dtype=complex), "mul", np.full_like(X, -model.energy)),
    ]
    return terms, 4


def assemble(model, grid: FourierGrid) -> AssembledOperator:
    terms, ncomp = model_terms(model, grid)
    tag = {"model": type(model).__name__, "lengths": grid.lengths, "cutoffs": grid.cutoffs}
    if isinstance(model, ValleyModel):
        tag["kind"] = model.kind
        tag["valley_blocks"] = (0, 2) if ncomp == 4 else (0, 1)
    return assemble_terms(grid, terms, ncomp, tag)


# ---------------------------------------------------------------- diagonalisation

@dataclass
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    window: tuple[float, float] | None = None
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return self.eigenvalues.size

    def covers(self, lo: float, hi: float) -> bool:
        if self.window is None:
            return True
        return self.window[0] <= lo and hi <= self.window[1]


def diagonalize(op: AssembledOperator | np.ndarray, window: tuple[float, float] | None = None,
                check: bool = True) -> SpectralDecomposition:
    """Dense Hermitian eigensolve; with a window only pairs in (lo, hi] are returned."""
    H = op.matrix if isinstance(op, AssembledOperator) else np.asarray(op)
    prov = dict(op.model_tag) if isinstance(op, AssembledOperator) else {}
    prov["dim"] = H.shape[0]
    try:
        if window is None:
            w, V = scipy.linalg.eigh(H, check_finite=False)
        else:
            w, V = scipy.linalg.eigh(H, subset_by_value=window, driver="evr", check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolverError(f"eigensolver failed for {prov}: {exc}") from exc
    if not np.all(np.isfinite(w)):
        raise SolverError(f"non-finite eigenvalues for {prov}")
    sd = SpectralDecomposition(w, V, window, prov)
    if check and w.size:
        res = np.abs(H @ V - V * w).max()
        if not res <= 1e-8 * max(1.0, np.abs(w).max()):
            raise SolverError(f"eigen-residual {res:.2e} too large for {prov}")
        prov["residual"] = float(res)
    return sd


# ---------------------------------------------------------------- edge band structure

@dataclass
class EdgeLevels:
    xi1: float
    energies: np.ndarray      # all eigenvalues
    weights: np.ndarray       # localisation weight near y = 0
    gap: float
    slopes: np.ndarray | None = None  # dE/dxi1 = <u| 1 x s1 |u> (Hellmann-Feynman)

    @property
    def in_gap(self):
        sel = np.abs(self.energies) < self.gap
        return self.energies[sel], self.weights[sel]

    @property
    def selected(self):
        e, w = self.in_gap
        return e[w > 0.5]

    def selected_with_slopes(self):
        sel = (np.abs(self.energies) < self.gap) & (self.weights > 0.5)
        return self.energies[sel], self.slopes[sel]


def gap_crossings(levels: Sequence[EdgeLevels], band: float | None = None) -> list[tuple[float, int]]:
    """Zero crossings (xi1, sign of dE/dxi1) of the localisation-selected branches.

    Consecutive samples are matched by first-order extrapolation E + slope * dxi;
    only states with |E| < band (default: half the gap) take part.
    """
    out = []
    for a, b in zip(levels[:-1], levels[1:]):
        Ea, Sa = a.selected_with_slopes()
        Eb, Sb = b.selected_with_slopes()
        lim = 0.5 * a.gap if band is None else band
        d = b.xi1 - a.xi1
        for e, s in zip(Ea, Sa):
            if abs(e) >= lim:
                continue
            pred = e + s * d
            near = np.abs(Eb - pred) < 0.5 * lim
            if not near.any():
                continue
            j = np.flatnonzero(near)[np.argmin(np.abs(Eb[near] - pred))]
            if np.sign(e) != np.sign(Eb[j]) and np.sign(Sb[j]) == np.sign(s):
                out.append((0.5 * (a.xi1 + b.xi1), int(np.sign(s))))
    return out


def edge_band_structure(p: ModelParams, m: SwitchSpec, xi1_list, Ly: float, Ky: int) -> list[EdgeLevels]:
    from .bulkspectra import bulk_gap

    if not p.gapped:
        raise ModelError("edge spectrum needs lambda*Omega != 0")
    gap, _ = bulk_gap(p)
    grid = make_grid(1, Ly, Ky)
    (Y,) = _centered(grid)
    win = edge_window(Y, Ly)
    out = []
    for xi1 in xi1_list:
        op = assemble(EdgeModel(p, m, float(xi1)), grid)
        sd = diagonalize(op, check=False)
        # density of each eigenvector on the sample grid (sum over 4 components)
        psi = grid.to_real_space(sd.eigenvectors.T.reshape(-1), ncomp=4 * sd.eigenvectors.shape[1])
        psi = psi.reshape(sd.eigenvectors.shape[1], 4, -1)
        rho = (np.abs(psi) ** 2).sum(axis=1)
        rho /= rho.sum(axis=1, keepdims=True)
        w = rho @ win
        V = sd.eigenvectors
        n = grid.n_modes
        swap = np.concatenate([V[n:2 * n], V[:n], V[3 * n:], V[2 * n:3 * n]])
        slopes = np.einsum("ij,ij->j", V.conj(), swap).real
        out.append(EdgeLevels(float(xi1), sd.eigenvalues, w, gap, slopes))
    return out


# ---------------------------------------------------------------- export

_DTYPES = {np.dtype("<f8"): b"f8", np.dtype("<c16"): b"c16", np.dtype("<i8"): b"i8"}


def array_bytes(arr: np.ndarray) -> bytes:
    """Flat little-endian binary: magic, dtype code, ndim, shape, raw data."""
    a = np.ascontiguousarray(arr)
    a = a.astype(a.dtype.newbyteorder("<"), copy=False)
    code = _DTYPES.get(a.dtype)
    if code is None:
        raise ValueError(f"unsupported dtype {a.dtype}")
    head = b"DMAR" + code.ljust(4, b" ") + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + a.tobytes()


def write_array(path: str | Path, arr: np.ndarray) -> None:
    Path(path).write_bytes(array_bytes(arr))


def read_array(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(4) != b"DMAR":
            raise ValueError("not a flat array file")
        code = fh.read(4).strip()
        (ndim,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
        dtype = {v: k for k, v in _DTYPES.items()}[code]
        return np.frombuffer(fh.read(), dtype=dtype).reshape(shape)
