"""Deterministic reference calculations.

Three independent cross-checks for the stochastic machinery:

* the noise-free trajectory, which yields the exact C(t) from a single
  deterministic run of the linear equation with zero noise;
* a dense matrix representation of that generator, assembled entry by entry
  from the index tables, whose matrix exponential validates the RK4
  integrator to arbitrary accuracy at small dimensions;
* a density-matrix hierarchy (HEOM) over doubled modes that serves as an
  exact reference for site populations.

The HEOM uses the pair (p, w) for the forward correlation and the conjugate
pair (conj(p), conj(w)) for the reversed one, so both hierarchies share the
same alpha(tau). Forward modes act from the left (L rho), conjugate modes
from the right (rho L), and the two up-couplings enter as commutators of
opposite sign; the trace of the physical matrix is then conserved
identically, so trace drift directly measures integrator error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .hierarchy import HierarchyIndexSpace, build_index_space
from .model import (
    ExcitonModel,
    ExponentialBCF,
    build_excited_hamiltonian,
    build_initial_excited_state,
)
from .observables import CorrelationTrace, correlation_linear
from .propagator import PropagationSpec, propagate

EXPM_DIMENSION_CAP = 5000


@dataclass(frozen=True)
class DenseGenerator:
    """Dense matrix form of the zero-noise linear generator.

    Stacked ordering: component (id, d) lives at row id * D + d, consistent
    with the index space enumeration.
    """

    matrix: np.ndarray
    space: HierarchyIndexSpace

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]


def build_dense_generator(model: ExcitonModel, bcf: ExponentialBCF,
                          space: HierarchyIndexSpace) -> DenseGenerator:
    """Assemble the full generator explicitly from the neighbor tables."""
    dim = model.n_sites
    n_idx = space.n_indices
    size = n_idx * dim
    h = build_excited_hamiltonian(model)
    rates = bcf.flat_w()
    prefs = bcf.flat_p()
    gen = np.zeros((size, size), dtype=complex)
    for i in range(n_idx):
        kw = complex(space.indices[i] @ rates)
        block = slice(i * dim, (i + 1) * dim)
        gen[block, block] = -1j * h - kw * np.eye(dim)
        for m in range(space.n_modes):
            site = int(space.mode_site[m])
            dn = space.down[i, m]
            if dn >= 0:
                gen[i * dim + site, dn * dim + site] += space.indices[i, m] * prefs[m]
            u = space.up[i, m]
            if u >= 0:
                gen[i * dim + site, u * dim + site] -= 1.0
    return DenseGenerator(matrix=gen, space=space)


def expm_oracle(generator: DenseGenerator, psi_stacked: np.ndarray, t: float) -> np.ndarray:
    """exp(G t) applied to a stacked state (Pade scaling-and-squaring)."""
    if generator.dimension > EXPM_DIMENSION_CAP:
        raise ValueError(
            f"generator dimension {generator.dimension} exceeds the "
            f"expm oracle cap of {EXPM_DIMENSION_CAP}"
        )
    psi_stacked = np.asarray(psi_stacked, dtype=complex)
    if psi_stacked.shape != (generator.dimension,):
        raise ValueError("stacked state dimension mismatch")
    return scipy.linalg.expm(generator.matrix * t) @ psi_stacked


def expm_correlation_trace(model: ExcitonModel, bcf: ExponentialBCF,
                           space: HierarchyIndexSpace, dt: float,
                           n_steps: int, record_stride: int = 1) -> CorrelationTrace:
    """C(t) from repeated application of the exact one-step propagator.

    Each recorded point applies exp(G * dt * stride) once more, so the only
    error is roundoff accumulation; this is the oracle the RK4 path is
    measured against.
    """
    gen = build_dense_generator(model, bcf, space)
    psi_ex, mu_tot = build_initial_excited_state(model)
    dim = model.n_sites
    stacked = np.zeros(gen.dimension, dtype=complex)
    stacked[:dim] = psi_ex
    if gen.dimension > EXPM_DIMENSION_CAP:
        raise ValueError("index space too large for the expm oracle")
    step = scipy.linalg.expm(gen.matrix * (dt * record_stride))
    n_rec = n_steps // record_stride + 1
    times = np.arange(n_rec) * dt * record_stride
    values = np.empty(n_rec, dtype=complex)
    for i in range(n_rec):
        values[i] = correlation_linear(stacked[:dim], psi_ex, mu_tot,
                                       model.ground_energy, times[i])
        if i + 1 < n_rec:
            stacked = step @ stacked
    return CorrelationTrace(times=times, values=values,
                            mu_tot_sq=mu_tot ** 2, kind="noisefree")


def noisefree_correlation(model: ExcitonModel, bcf: ExponentialBCF,
                          space: HierarchyIndexSpace, dt: float,
                          n_steps: int, record_stride: int = 1) -> CorrelationTrace:
    """Exact C(t) from the single zero-noise trajectory (RK4 path).

    Initial condition: the bright state in the physical slot, all
    auxiliaries zero. This trace is the A_ref source for error analyses and
    is bitwise reproducible.
    """
    psi_ex, mu_tot = build_initial_excited_state(model)
    spec = PropagationSpec(equation="noisefree", dt=dt, n_steps=n_steps,
                           record_stride=record_stride)
    result = propagate(psi_ex, spec, model, bcf, space)
    values = correlation_linear(result.psi, psi_ex, mu_tot,
                                model.ground_energy, result.times)
    return CorrelationTrace(times=result.times, values=values,
                            mu_tot_sq=mu_tot ** 2, kind="noisefree")


# ---------------------------------------------------------------------------
# HEOM reference for populations

TRACE_DRIFT_LIMIT = 1e-4


@dataclass
class HeomState:
    """Hierarchy of density matrices over the doubled mode set."""

    rho: np.ndarray          # (n_indices, N, N)
    space: HierarchyIndexSpace
    time: float = 0.0

    @property
    def physical(self) -> np.ndarray:
        return self.rho[0]


@dataclass(frozen=True)
class HeomResult:
    times: np.ndarray
    populations: np.ndarray      # (n_records, N)
    trace_drift: float
    hermiticity_deviation: float
    converged: bool
    depth: int
    final_state: HeomState


def _heom_modes(bcf: ExponentialBCF):
    """Doubled mode tables: per site, J forward then J conjugate modes."""
    n, j = bcf.n_sites, bcf.modes_per_site
    coef = np.empty(n * 2 * j, dtype=complex)
    rate = np.empty(n * 2 * j, dtype=complex)
    forward = np.zeros(n * 2 * j, dtype=bool)
    for site in range(n):
        base = site * 2 * j
        coef[base: base + j] = bcf.p[site]
        rate[base: base + j] = bcf.w[site]
        forward[base: base + j] = True
        coef[base + j: base + 2 * j] = np.conj(bcf.p[site])
        rate[base + j: base + 2 * j] = np.conj(bcf.w[site])
    return coef, rate, forward


def heom_rhs(state: HeomState, model: ExcitonModel, coef: np.ndarray,
             rate: np.ndarray, forward: np.ndarray) -> np.ndarray:
    """Right-hand side of the doubled-mode density-matrix hierarchy."""
    space = state.space
    rho = state.rho
    h = build_excited_hamiltonian(model)
    out = -1j * (h @ rho - rho @ h)
    out -= (space.indices @ rate)[:, None, None] * rho
    kval = space.indices
    for m in range(space.n_modes):
        site = int(space.mode_site[m])
        rows = np.nonzero(space.down[:, m] >= 0)[0]
        coupling = (kval[rows, m] * coef[m])[:, None]
        if forward[m]:
            out[rows, site, :] += coupling * rho[space.down[rows, m], site, :]
        else:
            out[rows, :, site] += coupling * rho[space.down[rows, m], :, site]
        rows = np.nonzero(space.up[:, m] >= 0)[0]
        sign = -1.0 if forward[m] else 1.0
        out[rows, site, :] += sign * rho[space.up[rows, m], site, :]
        out[rows, :, site] -= sign * rho[space.up[rows, m], :, site]
    return out


def heom_populations(model: ExcitonModel, bcf: ExponentialBCF, depth: int,
                     initial_site: int, dt: float, n_steps: int,
                     record_stride: int = 1) -> HeomResult:
    """Site populations from the density-matrix hierarchy at the given depth.

    Truncation: |k| <= depth over the doubled (forward + conjugate) modes.
    The result is flagged unconverged when the physical trace drifts beyond
    1e-4.
    """
    n = model.n_sites
    if not 0 <= initial_site < n:
        raise ValueError(f"initial site must be in [0, {n})")
    space = build_index_space(n, 2 * bcf.modes_per_site, depth)
    coef, rate, forward = _heom_modes(bcf)
    rho = np.zeros((space.n_indices, n, n), dtype=complex)
    rho[0, initial_site, initial_site] = 1.0
    state = HeomState(rho=rho, space=space)

    if n_steps % record_stride != 0:
        raise ValueError("record_stride must divide n_steps")
    n_rec = n_steps // record_stride + 1
    times = np.arange(n_rec) * dt * record_stride
    pops = np.zeros((n_rec, n))
    pops[0] = np.real(np.diag(state.physical))
    rec = 1
    for s in range(n_steps):
        k1 = heom_rhs(state, model, coef, rate, forward)
        k2 = heom_rhs(HeomState(state.rho + 0.5 * dt * k1, space), model, coef, rate, forward)
        k3 = heom_rhs(HeomState(state.rho + 0.5 * dt * k2, space), model, coef, rate, forward)
        k4 = heom_rhs(HeomState(state.rho + dt * k3, space), model, coef, rate, forward)
        state.rho = state.rho + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        state.time += dt
        if (s + 1) % record_stride == 0:
            pops[rec] = np.real(np.diag(state.physical))
            rec += 1

    drift = abs(float(np.trace(state.physical).real) - 1.0)
    herm = float(np.abs(state.physical - state.physical.conj().T).max())
    return HeomResult(times=times, populations=pops, trace_drift=drift,
                      hermiticity_deviation=herm,
                      converged=drift <= TRACE_DRIFT_LIMIT, depth=depth,
                      final_state=state)
