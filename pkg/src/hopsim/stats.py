"""Ensemble statistics: the spectral error measure, bootstrap, scaling fits.

The error between a stochastic and a reference spectrum is the mean absolute
difference over a frequency window,

    error = 1/(omega_max - omega_min) * int |A - A_ref| d omega,

evaluated by the trapezoid rule on the common grid. Bootstrap resampling
draws ensembles of a chosen size from the trajectory store with replacement
(duplicates are expected, and the requested ensemble size may exceed the
store size), averages each to C(t), transforms to A(omega) and scores it
against the reference. Because the windowed transform is
linear in C(t), each resample is evaluated as a count-weighted average of
per-trajectory spectra; the equivalence with the average-then-transform
route is exact and covered by tests.

Stores are canonicalized by trajectory id, so resampling draws ids, not
storage positions: permuting the store on disk cannot change any result.
The bootstrap RNG is seeded independently of the trajectory streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .observables import CorrelationTrace, Spectrum, restrict, spectrum
from .persistence import TrajectoryRecord


@dataclass(frozen=True)
class EnsembleStore:
    """Per-trajectory C(t) samples on one common grid, sorted by trajectory id."""

    traj_ids: np.ndarray
    seeds: np.ndarray
    samples: np.ndarray     # (n_trajectories, n_times) complex
    times: np.ndarray
    kind: str
    metadata: dict

    def __post_init__(self):
        order = np.argsort(self.traj_ids, kind="stable")
        object.__setattr__(self, "traj_ids", np.asarray(self.traj_ids)[order])
        object.__setattr__(self, "seeds", np.asarray(self.seeds)[order])
        object.__setattr__(self, "samples", np.asarray(self.samples, complex)[order])
        object.__setattr__(self, "times", np.asarray(self.times, float))
        if self.samples.ndim != 2 or self.samples.shape[1] != self.times.size:
            raise ValueError("samples must be (n_trajectories, n_times)")

    @property
    def n_trajectories(self) -> int:
        return self.samples.shape[0]

    @classmethod
    def from_records(cls, records: list[TrajectoryRecord], metadata: dict,
                     kind: str | None = None) -> "EnsembleStore":
        """Build from persisted records, dropping aborted trajectories."""
        kept = [r for r in records if not r.aborted]
        if not kept:
            raise ValueError("no completed trajectories in the store")
        first = kept[0]
        if kind is None:
            kind = first.kind
        for r in kept:
            if (r.kind != kind or r.t0 != first.t0 or r.dt_record != first.dt_record
                    or r.n_records != first.n_records):
                raise ValueError("store members must share grid, kind and metadata")
        times = first.t0 + first.dt_record * np.arange(first.n_records)
        return cls(
            traj_ids=np.array([r.traj_id for r in kept], dtype=np.int64),
            seeds=np.array([r.seed for r in kept], dtype=np.uint64),
            samples=np.stack([r.values for r in kept]),
            times=times,
            kind=kind,
            metadata=dict(metadata),
        )

    def mean_trace(self, mu_tot_sq: float) -> CorrelationTrace:
        return CorrelationTrace(times=self.times, values=self.samples.mean(axis=0),
                                mu_tot_sq=mu_tot_sq, kind=self.kind)


@dataclass(frozen=True)
class ErrorDistribution:
    """Bootstrap distribution of the spectral error for one ensemble size."""

    n_traj: int
    errors: np.ndarray
    mean: float
    fwhm: float

    def __post_init__(self):
        if np.any(np.asarray(self.errors) < 0.0):
            raise ValueError("spectral errors are non-negative by construction")


def spectral_error(frequencies: np.ndarray, a: np.ndarray, a_ref: np.ndarray,
                   omega_min: float, omega_max: float) -> float:
    """Windowed mean absolute difference of two spectra on a common grid."""
    if omega_max <= omega_min:
        raise ValueError("omega_max must exceed omega_min")
    freqs = np.asarray(frequencies, float)
    a = np.asarray(a, float)
    a_ref = np.asarray(a_ref, float)
    if a.shape != freqs.shape or a_ref.shape != freqs.shape:
        raise ValueError("spectra must share the frequency grid")
    sel = (freqs >= omega_min) & (freqs <= omega_max)
    if np.count_nonzero(sel) < 2:
        raise ValueError("window contains fewer than two frequency samples")
    f = freqs[sel]
    return float(np.trapezoid(np.abs(a - a_ref)[sel], f) / (f[-1] - f[0]))


def spectral_error_between(a: Spectrum, b: Spectrum, omega_min: float,
                           omega_max: float) -> float:
    ra = restrict(a, omega_min, omega_max)
    rb = restrict(b, omega_min, omega_max)
    if ra.frequencies.shape != rb.frequencies.shape or \
            not np.allclose(ra.frequencies, rb.frequencies, rtol=1e-12, atol=1e-12):
        raise ValueError("spectra live on different frequency grids")
    f = ra.frequencies
    return float(np.trapezoid(np.abs(ra.absorbance - rb.absorbance), f) / (f[-1] - f[0]))


def per_trajectory_spectra(store: EnsembleStore, mu_tot_sq: float, padding: int,
                           window: float | None, omega_min: float,
                           omega_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Windowed spectrum of every stored trajectory, restricted to the window.

    The apodization time constant must already be resolved (a float or None)
    so all trajectories, the mean and the reference share it exactly.
    """
    dt = float(store.times[1] - store.times[0])
    values = store.samples.copy()
    if window is not None:
        values *= np.exp(-store.times / window)[None, :]
    values[:, 0] *= 0.5
    values[:, -1] *= 0.5
    n_pad = padding * store.times.size
    absorb = np.fft.ifft(values, n=n_pad, axis=1).real * n_pad * dt
    freqs = 2.0 * np.pi * np.fft.fftfreq(n_pad, d=dt)
    order = np.argsort(freqs)
    freqs = freqs[order]
    absorb = absorb[:, order]
    sel = (freqs >= omega_min) & (freqs <= omega_max)
    return freqs[sel], np.ascontiguousarray(absorb[:, sel])


def bootstrap_errors(
    store: EnsembleStore,
    reference: Spectrum,
    n_traj: int,
    n_resamples: int,
    omega_min: float,
    omega_max: float,
    seed: int,
    padding: int = 4,
    window: float | None = None,
    histogram_bins: int = 64,
    batch: int = 256,
) -> ErrorDistribution:
    """Distribution of spectral errors over resampled ensembles of size n_traj.

    Each resample draws n_traj trajectory ids with replacement; resampling
    is deterministic given (store, seed, parameters) and independent of the
    storage order of the trajectories.
    """
    if store.n_trajectories < 1:
        raise ValueError("empty store")
    if n_traj < 1 or n_resamples < 1:
        raise ValueError("n_traj and n_resamples must be positive")
    mu_sq = float(store.metadata.get("mu_tot_sq", abs(store.samples[0, 0])))
    freqs, per_traj = per_trajectory_spectra(store, mu_sq, padding, window,
                                             omega_min, omega_max)
    ref = restrict(reference, omega_min, omega_max)
    if freqs.shape != ref.frequencies.shape or \
            not np.allclose(freqs, ref.frequencies, rtol=1e-12, atol=1e-12):
        raise ValueError("reference spectrum grid does not match the store grid")
    a_ref = ref.absorbance
    span = freqs[-1] - freqs[0]
    # trapezoid weights for the windowed mean absolute deviation
    quad_w = np.empty_like(freqs)
    quad_w[1:-1] = (freqs[2:] - freqs[:-2]) / 2.0
    quad_w[0] = (freqs[1] - freqs[0]) / 2.0
    quad_w[-1] = (freqs[-1] - freqs[-2]) / 2.0

    rng = np.random.default_rng(seed)
    n_store = store.n_trajectories
    errors = np.empty(n_resamples)
    done = 0
    while done < n_resamples:
        m = min(batch, n_resamples - done)
        draws = rng.integers(0, n_store, size=(m, n_traj))
        counts = np.zeros((m, n_store))
        for r in range(m):
            counts[r] = np.bincount(draws[r], minlength=n_store)
        a_mean = (counts @ per_traj) / n_traj
        errors[done: done + m] = (np.abs(a_mean - a_ref[None, :]) @ quad_w) / span
        done += m

    return ErrorDistribution(
        n_traj=n_traj,
        errors=errors,
        mean=float(errors.mean()),
        fwhm=fwhm_from_histogram(errors, bins=histogram_bins),
    )


def fwhm_from_histogram(values: np.ndarray, bins: int = 64) -> float:
    """Full width at half maximum of a binned empirical distribution."""
    values = np.asarray(values, float)
    if values.size == 0:
        raise ValueError("empty distribution")
    if values.max() == values.min():
        return 0.0
    counts, edges = np.histogram(values, bins=bins)
    half = counts.max() / 2.0
    above = np.nonzero(counts >= half)[0]
    return float(edges[above[-1] + 1] - edges[above[0]])


def scaling_fit(n_traj: np.ndarray, mean_errors: np.ndarray) -> float:
    """Least-squares slope of log(mean error) against log(n_traj)."""
    n = np.asarray(n_traj, float)
    e = np.asarray(mean_errors, float)
    if n.size < 3 or n.size != e.size:
        raise ValueError("need at least three (n_traj, mean error) points")
    if np.unique(n).size != n.size or np.any(n <= 0):
        raise ValueError("n_traj values must be positive and distinct")
    if np.any(e <= 0):
        raise ValueError("mean errors must be positive for a log-log fit")
    slope, _ = np.polyfit(np.log(n), np.log(e), 1)
    return float(slope)
