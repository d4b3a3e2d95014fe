"""Compiled inner loop: fixed-step RK4 over a batch of hierarchy trajectories.

One prange iteration owns one trajectory end to end, so results are
independent of batch composition and thread scheduling. Noise is sampled on
a half-step grid (2 * n_steps + 1 points): the two midpoint stages of every
RK4 step read the sample at t + dt/2, the endpoints read the on-step
samples. fastmath stays off so arithmetic is IEEE-reproducible.

Abort reasons: 0 = completed, 1 = non-finite amplitudes after a step,
2 = normalization denominator collapsed (below 1e-30).
"""

import warnings

import numpy as np

with warnings.catch_warnings():
    warnings.filterwarnings("ignore", message=".*TBB.*")
    from numba import njit, prange

ABORT_NONE = 0
ABORT_NONFINITE = 1
ABORT_NORM_COLLAPSE = 2

NORM_FLOOR = 1e-30


@njit(cache=True, parallel=True, fastmath=False)
def hops_rk4_batch(amps, minus_ih, neg_kw, kval, up, down, mode_site,
                   p_mode, pbar_mode, wbar_mode, noise_conj, has_noise,
                   nonlinear, dyadic, dt, n_steps, stride,
                   out_psi, out_norm, abort_step, abort_reason):
    """Propagate a batch of trajectories, recording the physical state.

    amps         : (B, n_idx, D) initial hierarchy amplitudes, evolved in place
    noise_conj   : (B, n_noise, D) conjugated noise samples, dt/2 grid
    out_psi      : (B, n_rec, D) physical-state snapshots (slot 0 = initial)
    out_norm     : (B, n_rec) squared norm of the physical state
    abort_step   : (B,) step index of an abort, -1 if completed
    abort_reason : (B,) see module constants
    """
    n_batch, n_idx, dim = amps.shape
    n_modes = up.shape[1]
    for b in prange(n_batch):
        psi = amps[b]
        xi = np.zeros(n_modes, np.complex128)
        k_psi = np.empty((4, n_idx, dim), np.complex128)
        k_xi = np.empty((4, n_modes), np.complex128)
        src = np.empty((n_idx, dim), np.complex128)
        src_xi = np.empty(n_modes, np.complex128)
        z_eff = np.empty(dim, np.complex128)
        exp_val = np.empty(dim, np.float64)
        abort_step[b] = -1
        abort_reason[b] = ABORT_NONE

        nrm = 0.0
        for d in range(dim):
            out_psi[b, 0, d] = psi[0, d]
            nrm += psi[0, d].real ** 2 + psi[0, d].imag ** 2
        out_norm[b, 0] = nrm

        rec = 1
        alive = True
        for s in range(n_steps):
            if not alive:
                break
            for stage in range(4):
                if stage == 0:
                    for i in range(n_idx):
                        for d in range(dim):
                            src[i, d] = psi[i, d]
                    for m in range(n_modes):
                        src_xi[m] = xi[m]
                    zi = 2 * s
                elif stage < 3:
                    half = 0.5 * dt
                    for i in range(n_idx):
                        for d in range(dim):
                            src[i, d] = psi[i, d] + half * k_psi[stage - 1, i, d]
                    for m in range(n_modes):
                        src_xi[m] = xi[m] + half * k_xi[stage - 1, m]
                    zi = 2 * s + 1
                else:
                    for i in range(n_idx):
                        for d in range(dim):
                            src[i, d] = psi[i, d] + dt * k_psi[2, i, d]
                    for m in range(n_modes):
                        src_xi[m] = xi[m] + dt * k_xi[2, m]
                    zi = 2 * s + 2

                for d in range(dim):
                    if has_noise:
                        z_eff[d] = noise_conj[b, zi, d]
                    else:
                        z_eff[d] = 0.0

                if nonlinear:
                    nrm = 0.0
                    for d in range(dim):
                        nrm += src[0, d].real ** 2 + src[0, d].imag ** 2
                    z_den = nrm + 1.0 if dyadic else nrm
                    if z_den < NORM_FLOOR:
                        abort_step[b] = s
                        abort_reason[b] = ABORT_NORM_COLLAPSE
                        alive = False
                        break
                    for d in range(dim):
                        exp_val[d] = (src[0, d].real ** 2 + src[0, d].imag ** 2) / z_den
                    for m in range(n_modes):
                        z_eff[mode_site[m]] += src_xi[m]
                        k_xi[stage, m] = (-wbar_mode[m] * src_xi[m]
                                          + pbar_mode[m] * exp_val[mode_site[m]])
                else:
                    for m in range(n_modes):
                        k_xi[stage, m] = 0.0

                for i in range(n_idx):
                    for d in range(dim):
                        acc = neg_kw[i] * src[i, d] + z_eff[d] * src[i, d]
                        for e in range(dim):
                            acc += minus_ih[d, e] * src[i, e]
                        k_psi[stage, i, d] = acc
                    for m in range(n_modes):
                        sm = mode_site[m]
                        dn = down[i, m]
                        if dn >= 0:
                            k_psi[stage, i, sm] += kval[i, m] * p_mode[m] * src[dn, sm]
                        u = up[i, m]
                        if u >= 0:
                            k_psi[stage, i, sm] -= src[u, sm]
                            if nonlinear:
                                for d in range(dim):
                                    k_psi[stage, i, d] += exp_val[sm] * src[u, d]
            if not alive:
                break

            sixth = dt / 6.0
            finite = True
            for i in range(n_idx):
                for d in range(dim):
                    v = psi[i, d] + sixth * (k_psi[0, i, d] + 2.0 * k_psi[1, i, d]
                                             + 2.0 * k_psi[2, i, d] + k_psi[3, i, d])
                    if not (np.isfinite(v.real) and np.isfinite(v.imag)):
                        finite = False
                    psi[i, d] = v
            for m in range(n_modes):
                xi[m] = xi[m] + sixth * (k_xi[0, m] + 2.0 * k_xi[1, m]
                                         + 2.0 * k_xi[2, m] + k_xi[3, m])
            if not finite:
                abort_step[b] = s
                abort_reason[b] = ABORT_NONFINITE
                alive = False
                break

            if (s + 1) % stride == 0:
                nrm = 0.0
                for d in range(dim):
                    out_psi[b, rec, d] = psi[0, d]
                    nrm += psi[0, d].real ** 2 + psi[0, d].imag ** 2
                out_norm[b, rec] = nrm
                rec += 1
