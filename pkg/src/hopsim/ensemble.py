"""Parallel trajectory ensembles with deterministic, order-independent seeding.

Trajectory i draws its noise from a 64-bit seed derived from
(master_seed, i) by key-splitting, with no sequential dependence, so any
subset of trajectories can run anywhere in any order and still reproduce
bit for bit. Work is dispatched in fixed-size batches of consecutive
trajectory ids; inside the compiled kernel every trajectory is arithmetically
independent of its batch mates, and all merges happen in trajectory-id
order, so results are bitwise identical for any worker count.

Aborted trajectories (non-finite amplitudes or norm collapse) are excluded
from ensemble averages and reported with counts; they are never silently
retried under a fresh seed, which would bias the ensemble.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .hierarchy import build_index_space
from .model import ExcitonModel, ExponentialBCF, build_initial_excited_state, content_hash
from .noise import NoiseGenerator
from .observables import correlation_linear, correlation_nonlinear
from .persistence import TrajectoryRecord
from .propagator import PropagationSpec, propagate
from .stats import EnsembleStore

DEFAULT_BATCH_SIZE = 512


def derive_trajectory_seed(master_seed: int, traj_id: int) -> int:
    """Independent 64-bit stream key for one trajectory."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(traj_id),))
    return int(ss.generate_state(1, np.uint64)[0])


def resolve_workers(workers: int | None) -> int:
    """Explicit value, else the HOPS_WORKERS environment variable, else 1."""
    if workers is not None:
        if workers < 1:
            raise ValueError("worker count must be >= 1")
        return workers
    env = os.environ.get("HOPS_WORKERS", "").strip()
    if env:
        return max(1, int(env))
    return 1


@dataclass
class EnsembleAccumulator:
    """Streaming, mergeable sums over completed trajectories.

    Merging is associative and commutative up to float ordering; callers
    merge batches in trajectory-id order to keep results bitwise stable.
    """

    times: np.ndarray
    n_sites: int
    n_completed: int = 0
    n_aborted: int = 0
    abort_reasons: dict = field(default_factory=dict)
    sum_correlation: np.ndarray | None = None
    sum_populations: np.ndarray | None = None
    sum_norm_sq: np.ndarray | None = None

    def __post_init__(self):
        n_rec = self.times.size
        if self.sum_correlation is None:
            self.sum_correlation = np.zeros(n_rec, dtype=complex)
        if self.sum_populations is None:
            self.sum_populations = np.zeros((n_rec, self.n_sites))
        if self.sum_norm_sq is None:
            self.sum_norm_sq = np.zeros(n_rec)

    def add_batch(self, c_samples: np.ndarray | None, psi: np.ndarray,
                  norm_sq: np.ndarray, kept: np.ndarray,
                  abort_reasons: np.ndarray, nonlinear: bool) -> None:
        self.n_aborted += int(np.count_nonzero(~kept))
        for reason in abort_reasons[~kept]:
            key = int(reason)
            self.abort_reasons[key] = self.abort_reasons.get(key, 0) + 1
        if not np.any(kept):
            return
        self.n_completed += int(np.count_nonzero(kept))
        if c_samples is not None:
            self.sum_correlation += c_samples[kept].sum(axis=0)
        occ = np.abs(psi[kept]) ** 2
        if nonlinear:
            occ = occ / norm_sq[kept][..., None]
        self.sum_populations += occ.sum(axis=0)
        self.sum_norm_sq += norm_sq[kept].sum(axis=0)

    def merge(self, other: "EnsembleAccumulator") -> None:
        self.n_completed += other.n_completed
        self.n_aborted += other.n_aborted
        for k, v in other.abort_reasons.items():
            self.abort_reasons[k] = self.abort_reasons.get(k, 0) + v
        self.sum_correlation += other.sum_correlation
        self.sum_populations += other.sum_populations
        self.sum_norm_sq += other.sum_norm_sq

    @property
    def populations(self) -> np.ndarray:
        if self.n_completed == 0:
            raise ValueError("no completed trajectories")
        return self.sum_populations / self.n_completed

    @property
    def mean_norm_sq(self) -> np.ndarray:
        if self.n_completed == 0:
            raise ValueError("no completed trajectories")
        return self.sum_norm_sq / self.n_completed


@dataclass(frozen=True)
class EnsembleTask:
    """Picklable description of one ensemble run."""

    model: ExcitonModel
    bcf: ExponentialBCF
    depth: int
    spec: PropagationSpec
    initial: np.ndarray          # (D,) initial physical state
    master_seed: int
    observable: str              # "correlation" | "populations"

    def __post_init__(self):
        if self.observable not in ("correlation", "populations"):
            raise ValueError("observable must be 'correlation' or 'populations'")


def _run_batch(task: EnsembleTask, start: int, stop: int):
    """Propagate trajectories [start, stop); returns id-ordered batch arrays."""
    model, bcf, spec = task.model, task.bcf, task.spec
    space = build_index_space(model.n_sites, bcf.modes_per_site, task.depth)
    n = stop - start
    n_noise = 2 * spec.n_steps + 1
    gen = NoiseGenerator(bcf, spec.dt / 2.0, n_noise)
    seeds = np.empty(n, dtype=np.uint64)
    noise = np.empty((n, model.n_sites, n_noise), dtype=complex)
    for j, traj_id in enumerate(range(start, stop)):
        seeds[j] = derive_trajectory_seed(task.master_seed, traj_id)
        noise[j] = gen.realize(int(seeds[j])).samples
    psi0 = np.broadcast_to(task.initial, (n, model.n_sites))
    result = propagate(np.ascontiguousarray(psi0), spec, model, bcf, space, noise=noise)

    c_samples = None
    if task.observable == "correlation":
        psi_ex, mu_tot = build_initial_excited_state(model)
        if spec.equation == "nonlinear":
            c_samples = correlation_nonlinear(
                result.psi, result.z_denominator(spec.norm_context), psi_ex,
                mu_tot, model.ground_energy, result.times)
        else:
            c_samples = correlation_linear(
                result.psi, psi_ex, mu_tot, model.ground_energy, result.times)
    return (start, seeds, c_samples, result.psi, result.norm_sq,
            result.abort_step, result.abort_reason)


def _worker_init():
    # one compiled thread per process when several workers share the machine
    import numba
    numba.set_num_threads(1)


@dataclass
class EnsembleRunResult:
    times: np.ndarray
    kind: str
    accumulator: EnsembleAccumulator
    records: list          # correlation runs only, in trajectory-id order
    n_requested: int

    def store(self, metadata: dict) -> EnsembleStore:
        if not self.records:
            raise ValueError("this run collected no per-trajectory records")
        return EnsembleStore.from_records(self.records, metadata)


def run_ensemble(
    task: EnsembleTask,
    n_traj: int,
    workers: int | None = None,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> EnsembleRunResult:
    """Run n_traj trajectories, merging batches in trajectory-id order.

    Batch boundaries depend only on batch_size and trajectory ids, never on
    the worker count, so the merged result is bitwise reproducible for any
    parallel layout.
    """
    if n_traj < 0:
        raise ValueError("n_traj must be >= 0")
    workers = resolve_workers(workers)
    spec = task.spec
    times = np.arange(spec.n_records) * (spec.dt * spec.record_stride)
    acc = EnsembleAccumulator(times=times, n_sites=task.model.n_sites)
    records: list[TrajectoryRecord] = []
    nonlinear = spec.equation == "nonlinear"
    bounds = [(s, min(s + batch_size, n_traj)) for s in range(0, n_traj, batch_size)]

    def consume(batch):
        start, seeds, c_samples, psi, norm_sq, abort_step, abort_reason = batch
        kept = abort_step < 0
        acc.add_batch(c_samples, psi, norm_sq, kept, abort_reason, nonlinear)
        if task.observable == "correlation":
            for j in range(seeds.size):
                n_keep = psi.shape[1] if kept[j] else \
                    int(abort_step[j]) // spec.record_stride + 1
                records.append(TrajectoryRecord(
                    traj_id=start + j,
                    seed=int(seeds[j]),
                    kind=spec.equation,
                    t0=0.0,
                    dt_record=spec.dt * spec.record_stride,
                    values=c_samples[j, :n_keep],
                    abort_reason=int(abort_reason[j]),
                ))

    if workers == 1 or len(bounds) <= 1:
        for start, stop in bounds:
            consume(_run_batch(task, start, stop))
    else:
        window = 2 * workers
        with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init) as pool:
            pending = []
            for a, b in bounds:
                pending.append(pool.submit(_run_batch, task, a, b))
                if len(pending) >= window:
                    consume(pending.pop(0).result())
            # merge remaining batches in id order regardless of completion order
            for fut in pending:
                consume(fut.result())

    return EnsembleRunResult(times=times, kind=spec.equation, accumulator=acc,
                             records=records, n_requested=n_traj)


def store_metadata(model: ExcitonModel, bcf: ExponentialBCF, depth: int,
                   spec: PropagationSpec, master_seed: int, mu_tot_sq: float) -> dict:
    return {
        "model_hash": content_hash(model, bcf),
        "K": depth,
        "dt": spec.dt,
        "dt_record": spec.dt * spec.record_stride,
        "equation": spec.equation,
        "master_seed": int(master_seed),
        "mu_tot_sq": mu_tot_sq,
    }
