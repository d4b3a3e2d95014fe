"""Aggregate model: system Hamiltonian, transition dipoles, bath correlation.

The aggregate is a set of N coupled two-level chromophores (sites). Everything
downstream works in units where the characteristic bath frequency is 1 and
hbar = 1. Transition dipoles enter only through their projections onto the
light polarization, one real scalar per site.

The bath memory is carried by a per-site correlation function written as a sum
of complex exponentials

    alpha_n(tau) = sum_j p_nj * exp(-w_nj * tau),    Re(w_nj) > 0, tau >= 0.

A numerical quadrature of the spectral-density integral is provided purely to
validate user-supplied exponential mode sets against a target J(omega); the
simulator itself consumes only the exponential form.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ExcitonModel:
    """One-exciton aggregate: site energies, couplings and projected dipoles.

    Parameters
    ----------
    site_energies : (N,) real array
        Site energies eps_n of the singly excited states.
    couplings : (N, N) real array
        Electronic couplings V_nm. Must be symmetric with zero diagonal.
    projected_dipoles : (N,) real array
        Scalar projections d_n of the transition dipole of site n onto the
        light polarization. At least one entry must be non-zero.
    ground_energy : float
        Energy eps_g of the electronic ground state (default 0).
    """

    site_energies: np.ndarray
    couplings: np.ndarray
    projected_dipoles: np.ndarray
    ground_energy: float = 0.0

    def __post_init__(self):
        eps = np.asarray(self.site_energies, dtype=float)
        v = np.asarray(self.couplings, dtype=float)
        d = np.asarray(self.projected_dipoles, dtype=float)
        n = eps.shape[0]
        if eps.ndim != 1 or n < 1:
            raise ValueError("site_energies must be a 1-d array with at least one site")
        if v.shape != (n, n):
            raise ValueError(f"couplings must be {n}x{n}, got {v.shape}")
        if not np.allclose(v, v.T, atol=0.0, rtol=0.0):
            raise ValueError("couplings matrix must be symmetric")
        if np.any(np.diag(v) != 0.0):
            raise ValueError("couplings matrix must have zero diagonal")
        if d.shape != (n,):
            raise ValueError(f"projected_dipoles must have shape ({n},)")
        if not np.any(d != 0.0):
            raise ValueError("zero total transition strength")
        if not (np.all(np.isfinite(eps)) and np.all(np.isfinite(v)) and np.all(np.isfinite(d))):
            raise ValueError("model parameters must be finite")
        object.__setattr__(self, "site_energies", _readonly(eps))
        object.__setattr__(self, "couplings", _readonly(v))
        object.__setattr__(self, "projected_dipoles", _readonly(d))

    @property
    def n_sites(self) -> int:
        return self.site_energies.shape[0]


@dataclass(frozen=True)
class ExponentialBCF:
    """Bath correlation functions as per-site sums of complex exponentials.

    Every site carries the same number of modes J; the mode parameters may
    differ from site to site. Flattened mode order is site-major:
    mode m = n * J + j.

    Parameters
    ----------
    p : (N, J) complex array
        Mode prefactors p_nj.
    w : (N, J) complex array
        Mode rates w_nj = gamma_nj + i * Omega_nj with gamma_nj > 0.
    """

    p: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=complex)
        w = np.asarray(self.w, dtype=complex)
        if p.ndim != 2 or p.shape != w.shape or p.shape[1] < 1:
            raise ValueError("p and w must be equal-shape (n_sites, n_modes) arrays")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(w))):
            raise ValueError("bath mode parameters must be finite")
        if np.any(w.real <= 0.0):
            raise ValueError("every mode rate needs Re(w) > 0 (decaying memory)")
        object.__setattr__(self, "p", _readonly(p))
        object.__setattr__(self, "w", _readonly(w))

    @classmethod
    def shared(cls, modes: Sequence[tuple[complex, complex]], n_sites: int) -> "ExponentialBCF":
        """Same mode set (p_j, w_j) replicated on every site."""
        p = np.array([m[0] for m in modes], dtype=complex)
        w = np.array([m[1] for m in modes], dtype=complex)
        return cls(np.tile(p, (n_sites, 1)), np.tile(w, (n_sites, 1)))

    @property
    def n_sites(self) -> int:
        return self.p.shape[0]

    @property
    def modes_per_site(self) -> int:
        return self.p.shape[1]

    @property
    def n_modes(self) -> int:
        return self.p.size

    def flat_p(self) -> np.ndarray:
        return self.p.reshape(-1)

    def flat_w(self) -> np.ndarray:
        return self.w.reshape(-1)

    def mode_site(self) -> np.ndarray:
        """Site index owning each flattened mode."""
        return np.repeat(np.arange(self.n_sites), self.modes_per_site)

    def alpha0(self, site: int) -> complex:
        """alpha_n(0) = sum_j p_nj."""
        return complex(self.p[site].sum())


def bcf_eval(bcf: ExponentialBCF, site: int, tau) -> np.ndarray | complex:
    """Evaluate alpha_site(tau) = sum_j p_j exp(-w_j tau) for tau >= 0.

    Negative lags are rejected; callers use alpha(-tau) = conj(alpha(tau))
    explicitly where needed.
    """
    t = np.asarray(tau, dtype=float)
    if np.any(t < 0.0):
        raise ValueError("bcf_eval requires tau >= 0; use conj(alpha(tau)) for negative lags")
    val = (bcf.p[site][None, :] * np.exp(-np.outer(np.atleast_1d(t), bcf.w[site]))).sum(axis=1)
    return val[0] if np.isscalar(tau) or t.ndim == 0 else val


@dataclass(frozen=True)
class SpectralDensity:
    """Spectral density J(omega) >= 0 on (0, omega_cut] at inverse temperature beta.

    Only used to cross-check exponential BCF fits by quadrature; beta = inf
    selects the zero-temperature limit (coth -> 1).
    """

    j: Callable[[np.ndarray], np.ndarray]
    beta: float
    omega_cut: float
    _check_grid: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.omega_cut <= 0.0:
            raise ValueError("omega_cut must be positive")
        if not (self.beta > 0.0):
            raise ValueError("beta must be positive (use numpy.inf for zero temperature)")
        grid = np.linspace(self.omega_cut * 1e-6, self.omega_cut, 2049)
        vals = np.asarray(self.j(grid), dtype=float)
        if np.any(vals < -1e-14):
            raise ValueError("spectral density must be non-negative on (0, omega_cut]")
        object.__setattr__(self, "_check_grid", _readonly(grid))

    @classmethod
    def from_table(cls, omega: np.ndarray, values: np.ndarray, beta: float) -> "SpectralDensity":
        omega = np.asarray(omega, float)
        values = np.asarray(values, float)
        if omega.ndim != 1 or omega.shape != values.shape or omega.size < 2:
            raise ValueError("tabulated spectral density needs matching 1-d omega/value arrays")
        if np.any(np.diff(omega) <= 0):
            raise ValueError("tabulated omega grid must be strictly increasing")

        def interp(w):
            return np.interp(w, omega, values, left=0.0, right=0.0)

        return cls(j=interp, beta=beta, omega_cut=float(omega[-1]))


def bcf_from_spectral_density(
    sd: SpectralDensity,
    taus: np.ndarray,
    rel_tol: float = 1e-8,
    tail_tol: float = 1e-5,
) -> np.ndarray:
    """Quadrature of the thermal bath-correlation integral on a tau grid.

    alpha(tau) = int_0^omega_cut J(w) [coth(beta w / 2) cos(w tau) - i sin(w tau)] dw

    Validation-only oracle for exponential fits. Raises if J has not decayed
    at omega_cut or if the adaptive quadrature reports a poor error estimate.
    """
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    grid = sd._check_grid
    jmax = float(np.max(np.abs(sd.j(grid))))
    jcut = float(abs(np.asarray(sd.j(np.array([sd.omega_cut])))[0]))
    if jmax > 0 and jcut > tail_tol * jmax:
        raise ValueError(
            f"spectral density tail not decayed at omega_cut={sd.omega_cut:g}: "
            f"J(omega_cut)={jcut:.3e} exceeds {tail_tol:g} * max(J)={tail_tol * jmax:.3e}"
        )

    if np.isinf(sd.beta):
        def integrand(w):
            return np.asarray(sd.j(w), dtype=float)
    else:
        def integrand(w):
            w = np.asarray(w, dtype=float)
            return np.asarray(sd.j(w), dtype=float) * (1.0 / np.tanh(sd.beta * w / 2.0))

    scale = max(jmax * sd.omega_cut, 1e-300)
    out = np.empty(taus.shape, dtype=complex)
    for i, tau in enumerate(taus):
        if tau == 0.0:
            re, re_err = quad(integrand, 0.0, sd.omega_cut, limit=400)
            im, im_err = 0.0, 0.0
        else:
            re, re_err = quad(integrand, 0.0, sd.omega_cut, weight="cos", wvar=tau, limit=400)
            im, im_err = quad(lambda w: np.asarray(sd.j(w), dtype=float),
                              0.0, sd.omega_cut, weight="sin", wvar=tau, limit=400)
        if max(re_err, im_err) > rel_tol * scale + 1e-12:
            raise ValueError(
                f"quadrature did not converge at tau={tau:g}: "
                f"error estimate {max(re_err, im_err):.3e} vs budget {rel_tol * scale:.3e}"
            )
        out[i] = re - 1j * im
    return out


def build_excited_hamiltonian(model: ExcitonModel) -> np.ndarray:
    """One-exciton Hamiltonian: eps_n on the diagonal, V_nm off-diagonal."""
    h = np.array(model.couplings, dtype=complex)
    np.fill_diagonal(h, model.site_energies)
    return h


def build_initial_excited_state(model: ExcitonModel) -> tuple[np.ndarray, float]:
    """Bright initial state and total transition strength.

    Returns (psi_ex, mu_tot) with psi_ex[n] = d_n / mu_tot and
    mu_tot = sqrt(sum_n d_n^2) > 0.
    """
    d = model.projected_dipoles
    mu_tot = float(np.sqrt(np.sum(d * d)))
    if mu_tot <= 0.0:
        raise ValueError("zero total transition strength")
    return d.astype(complex) / mu_tot, mu_tot


def collective_dipole_operators(model: ExcitonModel) -> tuple[np.ndarray, np.ndarray]:
    """Hermitian/anti-Hermitian parts of the collective dipole dyad.

    In the (N+1)-dimensional space (sites 0..N-1, ground state at index N):

        a_hat = sum_n d_n (|n><g| + |g><n|)
        b_hat = sum_n d_n (|n><g| - |g><n|)

    so that mu_eff |g><g| = (a_hat + b_hat) / 2.
    """
    n = model.n_sites
    d = model.projected_dipoles
    a = np.zeros((n + 1, n + 1), dtype=complex)
    b = np.zeros((n + 1, n + 1), dtype=complex)
    a[:n, n] = d
    a[n, :n] = d
    b[:n, n] = d
    b[n, :n] = -d
    return a, b


def initial_dyad_matrix(model: ExcitonModel) -> np.ndarray:
    """Matrix of mu_eff |g><g| in the (N+1)-dimensional space."""
    n = model.n_sites
    x = np.zeros((n + 1, n + 1), dtype=complex)
    x[:n, n] = model.projected_dipoles
    return x


def pure_state_decomposition(model: ExcitonModel) -> tuple[np.ndarray, np.ndarray]:
    """Four pure states resolving the initial dipole dyad.

    Returns (etas, states): etas = (+1, -1, +i, -i) and states[k] the
    (N+1)-dimensional unit vectors v_eta = (psi_ex + eta |g>) / sqrt(2),
    satisfying

        (mu_tot / 2) * sum_eta eta |v_eta><v_eta| = mu_eff |g><g|

    entrywise, and the eigenrelations a_hat v_{+-1} = +-mu_tot v_{+-1},
    b_hat v_{+-i} = +-i mu_tot v_{+-i}.
    """
    psi_ex, _ = build_initial_excited_state(model)
    n = model.n_sites
    etas = np.array([1.0, -1.0, 1.0j, -1.0j], dtype=complex)
    states = np.zeros((4, n + 1), dtype=complex)
    for k, eta in enumerate(etas):
        states[k, :n] = psi_ex
        states[k, n] = eta
    states /= np.sqrt(2.0)
    return etas, states


def project_dipoles(dipole_vectors: np.ndarray, polarization: np.ndarray) -> np.ndarray:
    """Project 3-vector dipoles onto a polarization vector: d_n = mu_n . eps."""
    mu = np.asarray(dipole_vectors, dtype=float)
    eps = np.asarray(polarization, dtype=float)
    if mu.ndim != 2 or mu.shape[1] != 3 or eps.shape != (3,):
        raise ValueError("need (N, 3) dipole vectors and a 3-vector polarization")
    return mu @ eps


def content_hash(model: ExcitonModel, bcf: ExponentialBCF) -> str:
    """Stable hash of the physical content (model + bath), for store metadata."""
    payload = {
        "site_energies": model.site_energies.tolist(),
        "couplings": model.couplings.tolist(),
        "projected_dipoles": model.projected_dipoles.tolist(),
        "ground_energy": model.ground_energy,
        "p_re": bcf.p.real.tolist(),
        "p_im": bcf.p.imag.tolist(),
        "w_re": bcf.w.real.tolist(),
        "w_im": bcf.w.imag.tolist(),
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
