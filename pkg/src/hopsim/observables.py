"""Observables: dipole correlation function, site populations, absorption spectrum.

The per-trajectory correlation sample at time t is

    linear:     mu_tot^2 <psi_ex | psi0(t)>            * exp(i eps_g t)
    non-linear: mu_tot^2 <psi_ex | psi0(t)> / (Z(t)/2) * exp(i eps_g t)

with Z(t) = |psi0(t)|^2 + 1 the dyadic normalization denominator. The
ensemble mean of the samples is C(t); a noise-free trajectory yields C(t)
directly. The phase factor carries the analytically evolved ground state,
which the propagator never stores. At t = 0 every sample equals mu_tot^2
exactly up to roundoff.

The absorption spectrum is the real half-line Fourier transform of C(t),
evaluated by FFT of the zero-padded trace with trapezoid end weights and an
optional exponential apodization window recorded on the result. Ensemble
averaging is done on C(t) samples, not on per-trajectory spectra; the two
agree by linearity of the transform.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

KINDS = ("linear", "nonlinear", "noisefree")

WINDOW_DECAY_THRESHOLD = 1e-3


@dataclass(frozen=True)
class CorrelationTrace:
    """C(t) on a uniform grid starting at t = 0."""

    times: np.ndarray
    values: np.ndarray
    mu_tot_sq: float
    kind: str

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=complex)
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if t.ndim != 1 or t.shape != v.shape:
            raise ValueError("times and values must be matching 1-d arrays")
        if t.size < 1 or t[0] != 0.0:
            raise ValueError("traces start at t = 0")
        if abs(v[0] - self.mu_tot_sq) > 1e-10:
            raise ValueError(
                f"C(0) = {v[0]} violates the mu_tot^2 = {self.mu_tot_sq} identity"
            )
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def dt(self) -> float:
        if self.times.size < 2:
            raise ValueError("single-point trace has no grid spacing")
        steps = np.diff(self.times)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            raise ValueError("trace grid is not uniform")
        return float(steps[0])


@dataclass(frozen=True)
class Spectrum:
    """Absorption spectrum A(omega) with the apodization that produced it."""

    frequencies: np.ndarray
    absorbance: np.ndarray
    window: str = "none"

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        a = np.asarray(self.absorbance, dtype=float)
        if f.shape != a.shape or f.ndim != 1:
            raise ValueError("frequencies and absorbance must be matching 1-d arrays")
        if not np.all(np.isfinite(a)):
            raise ValueError("absorbance must be finite everywhere")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "absorbance", a)


def correlation_linear(psi0_t: np.ndarray, psi_ex: np.ndarray, mu_tot: float,
                       eps_g: float, t) -> np.ndarray | complex:
    """Per-trajectory linear sample; psi0_t may carry leading batch/time axes."""
    psi0_t = np.asarray(psi0_t, dtype=complex)
    overlap = psi0_t @ np.conj(psi_ex)
    phase = np.exp(1j * eps_g * np.asarray(t, dtype=float))
    return mu_tot ** 2 * overlap * phase


def correlation_nonlinear(psi0_t: np.ndarray, z_t: np.ndarray, psi_ex: np.ndarray,
                          mu_tot: float, eps_g: float, t) -> np.ndarray | complex:
    """Per-trajectory non-linear sample with Z(t) = |psi0|^2 + 1."""
    psi0_t = np.asarray(psi0_t, dtype=complex)
    z_t = np.asarray(z_t, dtype=float)
    if np.any(z_t / 2.0 < 1e-30):
        raise FloatingPointError("normalization denominator collapsed")
    overlap = psi0_t @ np.conj(psi_ex)
    phase = np.exp(1j * eps_g * np.asarray(t, dtype=float))
    return mu_tot ** 2 * overlap / (z_t / 2.0) * phase


def ensemble_correlation(samples: np.ndarray, times: np.ndarray, mu_tot_sq: float,
                         kind: str) -> CorrelationTrace:
    """Mean of per-trajectory C samples (rows in trajectory-id order)."""
    samples = np.asarray(samples, dtype=complex)
    if samples.ndim != 2:
        raise ValueError("samples must be (n_trajectories, n_times)")
    return CorrelationTrace(times=np.asarray(times, float),
                            values=samples.mean(axis=0),
                            mu_tot_sq=mu_tot_sq, kind=kind)


def populations(psi_snapshots: np.ndarray, kind: str,
                norm_sq: np.ndarray | None = None) -> np.ndarray:
    """Ensemble-averaged site populations, (n_times, N).

    linear: raw M[|psi0_n|^2]; the linear hierarchy reproduces the density
    matrix without per-trajectory normalization, so no rescaling is applied.
    nonlinear: M[|psi0_n|^2 / |psi0|^2], populations of the normalized state.
    """
    snaps = np.asarray(psi_snapshots, dtype=complex)
    if snaps.ndim == 2:
        snaps = snaps[None, ...]
        if norm_sq is not None:
            norm_sq = np.asarray(norm_sq)[None, ...]
    occ = np.abs(snaps) ** 2
    if kind == "linear" or kind == "noisefree":
        return occ.mean(axis=0)
    if kind == "nonlinear":
        if norm_sq is None:
            raise ValueError("non-linear populations need the recorded norms")
        return (occ / np.asarray(norm_sq)[..., None]).mean(axis=0)
    raise ValueError(f"kind must be one of {KINDS}")


def mean_norm_sq(norm_sq: np.ndarray) -> np.ndarray:
    """M[|psi0|^2](t); tracks the trace reproduced by the linear ensemble."""
    norm_sq = np.asarray(norm_sq)
    return norm_sq.mean(axis=0) if norm_sq.ndim == 2 else norm_sq


def resolve_window(trace: CorrelationTrace, window: str | float = "auto") -> float | None:
    """Resolve an apodization request to a time constant (or None).

    "auto" applies tau_w = T/3 only when the trace has not decayed below
    1e-3 |C(0)| by its final time. Studies resolve the window once, on the
    reference trace, and reuse the value everywhere so stochastic and
    reference spectra always share the same apodization.
    """
    if window is None or window == "none":
        return None
    if isinstance(window, (int, float)):
        if window <= 0:
            raise ValueError("apodization time constant must be positive")
        return float(window)
    if window != "auto":
        raise ValueError(f"unknown window spec {window!r}")
    c0 = abs(trace.values[0])
    if c0 == 0.0:
        return None
    if abs(trace.values[-1]) > WINDOW_DECAY_THRESHOLD * c0:
        return float(trace.times[-1] / 3.0)
    return None


def spectrum(trace: CorrelationTrace, padding: int = 4,
             window: str | float = "auto") -> Spectrum:
    """A(omega) = Re int_0^T dt exp(i omega t) C(t) by zero-padded FFT.

    Trapezoid end weights halve the first and last samples; `padding`
    multiplies the FFT length for frequency resolution. The full FFT grid is
    returned (ascending); restrict to a window of interest with `restrict`.
    """
    if padding < 1:
        raise ValueError("padding factor must be >= 1")
    dt = trace.dt
    tau_w = resolve_window(trace, window)
    values = trace.values.copy()
    if tau_w is not None:
        values *= np.exp(-trace.times / tau_w)
    values[0] *= 0.5
    values[-1] *= 0.5
    n_pad = padding * values.size
    padded = np.zeros(n_pad, dtype=complex)
    padded[: values.size] = values
    # exp(+i omega t) convention: site energy +Delta moves the peak to +Delta
    absorb = np.real(np.fft.ifft(padded)) * n_pad * dt
    freqs = 2.0 * np.pi * np.fft.fftfreq(n_pad, d=dt)
    order = np.argsort(freqs)
    return Spectrum(frequencies=freqs[order], absorbance=absorb[order],
                    window="none" if tau_w is None else f"exp:{tau_w:.12g}")


def restrict(spec: Spectrum, omega_min: float, omega_max: float) -> Spectrum:
    """Slice a spectrum to the frequency window of interest."""
    if omega_max <= omega_min:
        raise ValueError("omega_max must exceed omega_min")
    sel = (spec.frequencies >= omega_min) & (spec.frequencies <= omega_max)
    if not np.any(sel):
        raise ValueError("window contains no frequency samples")
    return Spectrum(frequencies=spec.frequencies[sel], absorbance=spec.absorbance[sel],
                    window=spec.window)


# ---------------------------------------------------------------------------
# CSV emission (data files with one metadata comment line)

def _metadata_line(metadata: dict) -> str:
    parts = [f"{k}={v}" for k, v in metadata.items()]
    return "# " + " ".join(parts)


def _parse_metadata(line: str) -> dict:
    meta = {}
    for tok in line.lstrip("# ").split():
        if "=" in tok:
            k, _, v = tok.partition("=")
            meta[k] = v
    return meta


def write_correlation_csv(path, trace: CorrelationTrace, metadata: dict) -> None:
    meta = dict(metadata)
    meta.setdefault("kind", trace.kind)
    meta.setdefault("mu_tot_sq", repr(float(trace.mu_tot_sq)))
    buf = io.StringIO()
    buf.write(_metadata_line(meta) + "\n")
    buf.write("t,ReC,ImC\n")
    for t, c in zip(trace.times, trace.values):
        buf.write(f"{float(t)!r},{float(c.real)!r},{float(c.imag)!r}\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def read_correlation_csv(path) -> tuple[CorrelationTrace, dict]:
    with open(path) as fh:
        first = fh.readline()
        meta = _parse_metadata(first) if first.startswith("#") else {}
        header = fh.readline() if first.startswith("#") else first
        if not header.strip().startswith("t,"):
            raise ValueError(f"{path}: not a correlation CSV")
        rows = [line.split(",") for line in fh if line.strip()]
    data = np.array([[float(x) for x in row] for row in rows])
    kind = meta.get("kind", "linear")
    mu_sq = float(meta.get("mu_tot_sq", data[0, 1]))
    trace = CorrelationTrace(times=data[:, 0], values=data[:, 1] + 1j * data[:, 2],
                             mu_tot_sq=mu_sq, kind=kind)
    return trace, meta


def write_spectrum_csv(path, spec: Spectrum, metadata: dict) -> None:
    meta = dict(metadata)
    meta.setdefault("window", spec.window)
    buf = io.StringIO()
    buf.write(_metadata_line(meta) + "\n")
    buf.write("omega,A\n")
    for w, a in zip(spec.frequencies, spec.absorbance):
        buf.write(f"{float(w)!r},{float(a)!r}\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def read_spectrum_csv(path) -> tuple[Spectrum, dict]:
    with open(path) as fh:
        first = fh.readline()
        meta = _parse_metadata(first) if first.startswith("#") else {}
        header = fh.readline() if first.startswith("#") else first
        if not header.strip().startswith("omega,"):
            raise ValueError(f"{path}: not a spectrum CSV")
        rows = [line.split(",") for line in fh if line.strip()]
    data = np.array([[float(x) for x in row] for row in rows])
    return Spectrum(frequencies=data[:, 0], absorbance=data[:, 1],
                    window=meta.get("window", "none")), meta


def write_populations_csv(path, times: np.ndarray, pops: np.ndarray,
                          metadata: dict) -> None:
    n_sites = pops.shape[1]
    buf = io.StringIO()
    buf.write(_metadata_line(dict(metadata)) + "\n")
    buf.write("t," + ",".join(f"pop{n + 1}" for n in range(n_sites)) + "\n")
    for i, t in enumerate(times):
        row = ",".join(repr(float(x)) for x in pops[i])
        buf.write(f"{float(t)!r},{row}\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())
