"""Shared heavy fixtures.

Each N=32 junction solve holds a ~1.2 GB dense matrix, so the session
fixtures below extract every number the tests need from one solve and release
the matrices before the next solve starts.
"""
import time
from dataclasses import replace

import numpy as np
import pytest

from dirac_moire.dynamics import (
    ProjectionError, branch_weights, current, edge_packet, energy, propagate, spectral_coverage, steer,
)
from dirac_moire.transport import (
    DensityWeight, FilterSpec, JunctionRun, conductivity, filter_mask, junction_conductivity, make_filter,
    solve_junction,
)

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def report_line():
    def add(criterion, passed, detail):
        ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  criterion {criterion}: {detail}")
    return add


def _junction_summary(run: JunctionRun, packets: bool) -> dict:
    t0 = time.perf_counter()
    op, sd = solve_junction(run)
    out = {"solve_seconds": time.perf_counter() - t0, "n_window": len(sd)}
    L, d, E0 = run.Lx, run.delta, run.E0
    out["table"] = [junction_conductivity(op, sd, fr * L, d, E0).two_pi_sigma for fr in (0.375, 0.5, 0.625)]
    out["base"] = out["table"][1]
    out["filter_alt"] = junction_conductivity(op, sd, 0.45 * L, 1.5 * d, E0).two_pi_sigma
    p = make_filter(FilterSpec("junction_p", L / 2, d), op.grid).value
    q = filter_mask(op.grid, d).value
    out["dos_narrow"] = conductivity(sd, op, p, q, DensityWeight(2 * E0 / 3)).two_pi_sigma
    out["rotated"] = [junction_conductivity(op, sd, L / 2, d, E0, "rotated_p", j).two_pi_sigma for j in range(3)]
    if packets:
        psi0 = edge_packet(op, sd)
        # edges are chiral: towards the junction the incoming ray only carries +1, the outgoing ray only -1
        out_ray = edge_packet(op, sd, center=(25.0, 0.0), direction=-1)
        try:
            edge_packet(op, sd, direction=-1)
            chiral = False
        except ProjectionError:
            chiral = True
        e0 = energy(op, psi0)
        times = np.linspace(0.0, 50.0, 11)
        dn = de = 0.0
        for t in times:
            psi = propagate(sd, psi0, t)
            dn = max(dn, abs(psi.norm - psi0.norm))
            de = max(de, abs(energy(op, psi) - e0))
        back = propagate(sd, propagate(sd, psi0, 50.0), -50.0)
        w0 = branch_weights(psi0, run.model.geom)
        phase = psi0.__class__(psi0.coeffs * np.exp(0.7j), 0.0, 1.0, psi0.grid, psi0.components, psi0.info)
        out.update(
            retained=psi0.info["retained"], energy0=e0, norm_drift=dn, energy_drift=de,
            reversal=float(np.linalg.norm(back.coeffs - psi0.coeffs)),
            current=(current(op, psi0, 0.0), current(op, out_ray, np.pi)), chiral=chiral,
            weights_t0=w0, weights_t0_phase=branch_weights(phase, run.model.geom),
            identity=float(np.abs(propagate(sd, psi0, 0.0).coeffs - psi0.coeffs).max()),
            coverage=spectral_coverage(sd, psi0),
        )
        out["symmetric"] = steer(None, run, solved=(op, sd))
        out["symmetric_amp0"] = steer(0.0, run, amplitude=0.0, solved=(op, sd))
    del op, sd
    return out


@pytest.fixture(scope="session")
def junction32():
    return _junction_summary(JunctionRun(N=32), packets=True)


@pytest.fixture(scope="session")
def junction16():
    return _junction_summary(JunctionRun(N=16), packets=True)


@pytest.fixture(scope="session")
def junction32_potential(junction32):
    run = JunctionRun(N=32)
    run = replace(run, model=replace(run.model, potential_amp=0.1))
    op, sd = solve_junction(run)
    val = junction_conductivity(op, sd, run.Lx / 2, run.delta, run.E0).two_pi_sigma
    del op, sd
    return val


@pytest.fixture(scope="session")
def steer32(junction32):
    out = {}
    for th in (2 * np.pi / 3, 0.0, -2 * np.pi / 3):
        out[th] = steer(th, JunctionRun(N=32))
    return out
