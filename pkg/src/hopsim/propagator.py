"""Time evolution of the hierarchy state vector.

Three equations of motion share one structure. With L_n = |n><n| acting in
the one-exciton space and k the hierarchy multi-index,

    d psi^(k)/dt = (-i H_ex - k.w) psi^(k)
                   + sum_n L_n z_n psi^(k)
                   + sum_nj k_nj p_nj L_n psi^(k - e_nj)
                   - sum_n  O_n sum_j psi^(k + e_nj)

where out-of-range neighbors contribute zero. The linear equation uses
z_n = conj(z_{t,n}) and O_n = L_n. The non-linear equation replaces the
noise by the shifted z_n = conj(z_{t,n}) + sum_j xi_nj and the down-coupling
operator by O_n = L_n - <L_n>_t; each memory accumulator obeys

    d xi_nj/dt = -conj(w_nj) xi_nj + conj(p_nj) <L_n>_t

so that sum_j xi_nj equals the memory integral of the shifted noise. The
expectation <L_n>_t = |psi^(0)_n|^2 / Z uses Z = |psi^(0)|^2 in the
excited-only normalization context and Z = |psi^(0)|^2 + 1 in the dyadic
context, where the ground-state amplitude is never stored: its entire effect
is the +1 in Z plus an analytic phase applied by the observables. The
noise-free equation is the linear one with z identically zero.

`propagate` advances one trajectory or a batch with classic fixed-step RK4
(compiled kernel); stochastic runs read noise from a half-step grid so the
midpoint stages use the sample at t + dt/2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .hierarchy import HierarchyIndexSpace
from .model import ExcitonModel, ExponentialBCF, build_excited_hamiltonian
from .noise import NoiseTrajectory

EQUATIONS = ("linear", "nonlinear", "noisefree")
NORM_CONTEXTS = ("excited", "dyadic")

NORM_FLOOR = _kernels.NORM_FLOOR

ABORT_LABELS = {
    _kernels.ABORT_NONE: "completed",
    _kernels.ABORT_NONFINITE: "non-finite amplitudes",
    _kernels.ABORT_NORM_COLLAPSE: "norm collapse",
}


@dataclass(frozen=True)
class PropagationSpec:
    """What to integrate and how densely to record it.

    norm_context selects the denominator of <L_n>_t for the non-linear
    equation: "excited" divides by the squared norm of the physical state,
    "dyadic" adds the ground-state unit contribution.
    """

    equation: str
    dt: float
    n_steps: int
    record_stride: int = 1
    norm_context: str = "dyadic"

    def __post_init__(self):
        if self.equation not in EQUATIONS:
            raise ValueError(f"equation must be one of {EQUATIONS}, got {self.equation!r}")
        if self.norm_context not in NORM_CONTEXTS:
            raise ValueError(f"norm_context must be one of {NORM_CONTEXTS}")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if self.n_steps % self.record_stride != 0:
            raise ValueError("record_stride must divide n_steps")

    @property
    def n_records(self) -> int:
        return self.n_steps // self.record_stride + 1

    @property
    def t_final(self) -> float:
        return self.dt * self.n_steps


@dataclass
class HopsState:
    """Full hierarchy amplitudes plus the non-linear memory accumulators."""

    amplitudes: np.ndarray          # (n_indices, D) complex
    memory: np.ndarray | None = None  # (N, J) complex, non-linear only
    time: float = 0.0

    @classmethod
    def initial(cls, space: HierarchyIndexSpace, psi0: np.ndarray,
                with_memory: bool = False) -> "HopsState":
        psi0 = np.asarray(psi0, dtype=complex)
        amps = np.zeros((space.n_indices, psi0.shape[0]), dtype=complex)
        amps[0] = psi0
        memory = None
        if with_memory:
            memory = np.zeros((space.n_sites, space.modes_per_site), dtype=complex)
        return cls(amplitudes=amps, memory=memory, time=0.0)


def _check_dims(state: HopsState, model: ExcitonModel, space: HierarchyIndexSpace):
    n_idx, dim = state.amplitudes.shape
    if n_idx != space.n_indices:
        raise ValueError(f"state has {n_idx} hierarchy rows, index space has {space.n_indices}")
    if dim != model.n_sites:
        raise ValueError(f"state dimension {dim} does not match {model.n_sites} sites")


def coupling_expectations(psi0: np.ndarray, norm_context: str) -> np.ndarray:
    """<L_n>_t = |psi0_n|^2 / Z per site; Z per the normalization context.

    Invariant under rescaling psi0 -> c psi0 in the excited-only context
    (ratio of quadratic forms) but not in the dyadic one, where Z is affine.
    """
    occ = np.abs(psi0) ** 2
    z_den = occ.sum()
    if norm_context == "dyadic":
        z_den = z_den + 1.0
    if z_den < NORM_FLOOR:
        raise FloatingPointError("norm collapse: normalization denominator below 1e-30")
    return occ / z_den


def memory_rhs(memory: np.ndarray, expectations: np.ndarray,
               bcf: ExponentialBCF) -> np.ndarray:
    """d xi_nj/dt = -conj(w_nj) xi_nj + conj(p_nj) <L_n>_t."""
    return -np.conj(bcf.w) * memory + np.conj(bcf.p) * expectations[:, None]


def _structure_terms(amps: np.ndarray, z_site: np.ndarray, model: ExcitonModel,
                     bcf: ExponentialBCF, space: HierarchyIndexSpace) -> np.ndarray:
    """Common right-hand side: Hamiltonian, damping, noise, down- and up-coupling.

    The up-coupling enters with the bare L_n; non-linear callers add the
    +<L_n>_t correction on top.
    """
    h = build_excited_hamiltonian(model)
    out = amps @ (-1j * h).T
    out -= space.kdotw_all(bcf.flat_w())[:, None] * amps
    out += z_site[None, :] * amps
    kval = space.indices
    p_flat = bcf.flat_p()
    for m in range(space.n_modes):
        site = int(space.mode_site[m])
        rows = np.nonzero(space.down[:, m] >= 0)[0]
        out[rows, site] += kval[rows, m] * p_flat[m] * amps[space.down[rows, m], site]
        rows = np.nonzero(space.up[:, m] >= 0)[0]
        out[rows, site] -= amps[space.up[rows, m], site]
    return out


def linear_rhs(state: HopsState, z_t: np.ndarray, model: ExcitonModel,
               bcf: ExponentialBCF, space: HierarchyIndexSpace) -> np.ndarray:
    """Right-hand side of the linear equation; z_t holds the raw noise samples."""
    _check_dims(state, model, space)
    z_t = np.asarray(z_t, dtype=complex)
    if z_t.shape != (model.n_sites,):
        raise ValueError(f"z_t must have shape ({model.n_sites},)")
    return _structure_terms(state.amplitudes, np.conj(z_t), model, bcf, space)


def noisefree_rhs(state: HopsState, model: ExcitonModel, bcf: ExponentialBCF,
                  space: HierarchyIndexSpace) -> np.ndarray:
    """Linear right-hand side with all noise set to zero."""
    return linear_rhs(state, np.zeros(model.n_sites, dtype=complex), model, bcf, space)


def nonlinear_rhs(state: HopsState, z_t: np.ndarray, model: ExcitonModel,
                  bcf: ExponentialBCF, space: HierarchyIndexSpace,
                  norm_context: str = "dyadic") -> tuple[np.ndarray, np.ndarray]:
    """Right-hand side of the non-linear equation.

    Returns (d amplitudes/dt, d memory/dt). The state must carry memory
    accumulators (zero-initialized at t = 0).
    """
    _check_dims(state, model, space)
    if state.memory is None:
        raise ValueError("non-linear propagation needs memory accumulators in the state")
    z_t = np.asarray(z_t, dtype=complex)
    if z_t.shape != (model.n_sites,):
        raise ValueError(f"z_t must have shape ({model.n_sites},)")
    exp_val = coupling_expectations(state.amplitudes[0], norm_context)
    z_eff = np.conj(z_t) + state.memory.sum(axis=1)
    out = _structure_terms(state.amplitudes, z_eff, model, bcf, space)
    # +<L_n>_t correction of the down-coupling operator (L_n - <L_n>_t)
    for m in range(space.n_modes):
        site = int(space.mode_site[m])
        rows = np.nonzero(space.up[:, m] >= 0)[0]
        out[rows, :] += exp_val[site] * state.amplitudes[space.up[rows, m], :]
    return out, memory_rhs(state.memory, exp_val, bcf)


@dataclass
class PropagationResult:
    """Recorded snapshots of the physical state for one trajectory or a batch.

    Arrays carry a leading batch axis when the input did; `abort_step` is -1
    for completed trajectories, otherwise snapshots past the abort are zero
    and the trajectory must be excluded from ensembles.
    """

    times: np.ndarray
    psi: np.ndarray       # (..., n_records, D)
    norm_sq: np.ndarray   # (..., n_records)
    abort_step: np.ndarray
    abort_reason: np.ndarray

    @property
    def aborted(self) -> np.ndarray:
        return self.abort_step >= 0

    def z_denominator(self, norm_context: str) -> np.ndarray:
        if norm_context not in NORM_CONTEXTS:
            raise ValueError(f"norm_context must be one of {NORM_CONTEXTS}")
        return self.norm_sq + 1.0 if norm_context == "dyadic" else self.norm_sq


def _noise_to_batch(noise, spec: PropagationSpec, n_batch: int, dim: int) -> np.ndarray:
    """Validate the half-step noise grid and return conjugated (B, n_noise, D) samples."""
    need = 2 * spec.n_steps + 1
    if isinstance(noise, NoiseTrajectory):
        grids = [noise]
        samples = noise.samples[None, ...]
    else:
        samples = np.asarray(noise)
        grids = []
        if samples.ndim != 3:
            raise ValueError("batch noise must be (B, n_sites, n_samples)")
    for tr in grids:
        if abs(tr.dt - spec.dt / 2.0) > 1e-12 * max(1.0, spec.dt):
            raise ValueError(
                f"noise grid spacing {tr.dt} does not match the half-step grid dt/2 = {spec.dt / 2}"
            )
    if samples.shape[0] not in (1, n_batch) or samples.shape[1] != dim:
        raise ValueError("noise batch shape does not match the state batch")
    if samples.shape[2] < need:
        raise ValueError(
            f"noise too short: {samples.shape[2]} samples, need 2 * n_steps + 1 = {need}"
        )
    if samples.shape[0] == 1 and n_batch > 1:
        samples = np.broadcast_to(samples, (n_batch,) + samples.shape[1:])
    # kernel layout: (B, n_noise, D), conjugated once up front
    return np.ascontiguousarray(np.conj(np.swapaxes(samples[:, :, :need], 1, 2)))


def propagate(
    psi0: np.ndarray,
    spec: PropagationSpec,
    model: ExcitonModel,
    bcf: ExponentialBCF,
    space: HierarchyIndexSpace,
    noise: NoiseTrajectory | np.ndarray | None = None,
    initial_hierarchy: np.ndarray | None = None,
) -> PropagationResult:
    """RK4-propagate psi0 (or a (B, D) batch) and record physical-state snapshots.

    Auxiliaries above depth zero start at zero unless a full initial
    hierarchy is supplied. Stochastic equations require noise on the
    half-step grid (spacing dt/2, at least 2 * n_steps + 1 samples);
    the noise-free equation ignores `noise`.
    """
    if bcf.n_sites != model.n_sites or bcf.modes_per_site != space.modes_per_site \
            or space.n_sites != model.n_sites:
        raise ValueError("model, bath and index space disagree on the problem shape")
    psi0 = np.asarray(psi0, dtype=complex)
    batched = psi0.ndim == 2
    psi0_b = psi0 if batched else psi0[None, :]
    n_batch, dim = psi0_b.shape
    if dim != model.n_sites:
        raise ValueError(f"psi0 dimension {dim} does not match {model.n_sites} sites")

    amps = np.zeros((n_batch, space.n_indices, dim), dtype=complex)
    if initial_hierarchy is not None:
        init = np.asarray(initial_hierarchy, dtype=complex)
        if batched and init.ndim == 3:
            amps[:] = init
        elif not batched and init.ndim == 2:
            amps[0] = init
        else:
            raise ValueError("initial_hierarchy shape does not match the batch")
    else:
        amps[:, 0, :] = psi0_b

    stochastic = spec.equation in ("linear", "nonlinear")
    if stochastic and spec.n_steps > 0:
        if noise is None:
            raise ValueError(f"the {spec.equation} equation needs a noise trajectory")
        noise_conj = _noise_to_batch(noise, spec, n_batch, dim)
        has_noise = True
    else:
        noise_conj = np.zeros((n_batch, 1, dim), dtype=complex)
        has_noise = False

    n_rec = spec.n_records
    out_psi = np.zeros((n_batch, n_rec, dim), dtype=complex)
    out_norm = np.zeros((n_batch, n_rec))
    abort_step = np.full(n_batch, -1, dtype=np.int64)
    abort_reason = np.zeros(n_batch, dtype=np.int8)

    _kernels.hops_rk4_batch(
        amps,
        np.ascontiguousarray(-1j * build_excited_hamiltonian(model)),
        np.ascontiguousarray(-space.kdotw_all(bcf.flat_w())),
        np.ascontiguousarray(space.indices.astype(np.float64)),
        space.up, space.down, space.mode_site,
        np.ascontiguousarray(bcf.flat_p()),
        np.ascontiguousarray(np.conj(bcf.flat_p())),
        np.ascontiguousarray(np.conj(bcf.flat_w())),
        noise_conj, has_noise,
        spec.equation == "nonlinear", spec.norm_context == "dyadic",
        spec.dt, spec.n_steps, spec.record_stride,
        out_psi, out_norm, abort_step, abort_reason,
    )

    times = np.arange(n_rec) * (spec.dt * spec.record_stride)
    if not batched:
        return PropagationResult(times, out_psi[0], out_norm[0],
                                 abort_step[0], abort_reason[0])
    return PropagationResult(times, out_psi, out_norm, abort_step, abort_reason)
