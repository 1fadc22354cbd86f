"""Hot time-stepping kernels: numba-jitted with a pure-numpy fallback.

Backend selection: set ``QOTTO_BACKEND=numpy`` to force the interpreted
fallback (same source, no JIT) or ``QOTTO_BACKEND=numba`` to require the
jitted path.  Default is numba when importable.  ``benchmarks/bench_backends.py``
compares the two.

The state is stored as blocks ``rho[a, b]`` of shape (N, N): ``a``/``b`` index
the two-level work medium, the block matrices act on the damped mode.  One
Trotter step at midpoint angle phi and gap eps is

    rotate(phi) -> half unitary -> osc channel -> thermal channel
                -> half unitary -> rotate(phi)

where the rotation is the (real, involutive) change into the instantaneous
eigenbasis, the half unitaries are cached exponentials of the two
displaced-oscillator blocks of the composite Hamiltonian (exact: the
Hamiltonian is block diagonal in that frame), and the channels are exact
superoperator exponentials on their own factor.  Channel energies dE and the
drive work use the midpoint Hamiltonian, which makes the energy ledger close
to machine precision at every sample.
"""

from __future__ import annotations

import os

import numpy as np

_REQUESTED = os.environ.get("QOTTO_BACKEND", "").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - environment without numba
    numba = None
    HAVE_NUMBA = False

if _REQUESTED == "numba" and not HAVE_NUMBA:
    raise ImportError("QOTTO_BACKEND=numba requested but numba is not importable")

USE_NUMBA = HAVE_NUMBA and _REQUESTED != "numpy"
BACKEND = "numba" if USE_NUMBA else "numpy"


def _jit(fn):
    if USE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


@_jit
def _rotate(rho, r):
    """rho <- (R (x) 1) rho (R (x) 1) for real symmetric involutive 2x2 R."""
    n = rho.shape[2]
    buf = np.empty((2, 2, n, n), dtype=np.complex128)
    for a in range(2):
        for b in range(2):
            acc = np.zeros((n, n), dtype=np.complex128)
            for ap in range(2):
                for bp in range(2):
                    c = r[a, ap] * r[bp, b]
                    if c != 0.0:
                        acc += c * rho[ap, bp]
            buf[a, b] = acc
    rho[:, :, :, :] = buf


@_jit
def _half_unitary(rho, up, updag, um, umdag, phase):
    """Block conjugation by blockdiag(c+ U+, c- U-); phase = c+ * conj(c-)."""
    rho[0, 0] = np.dot(np.dot(up, rho[0, 0]), updag)
    rho[1, 1] = np.dot(np.dot(um, rho[1, 1]), umdag)
    rho[0, 1] = phase * np.dot(np.dot(up, rho[0, 1]), umdag)
    rho[1, 0] = np.conj(phase) * np.dot(np.dot(um, rho[1, 0]), updag)


@_jit
def _apply_gosc(rho, gflat, goff):
    """Damped-mode channel exponential, blocked by Fock-diagonal offset.

    The damping generator never mixes diagonals of different offset k = n - m,
    and its offset-k blocks are real, so exp(L dt) factorizes into real
    (N-k) x (N-k) blocks applied to each diagonal of every qubit block.
    """
    n = rho.shape[2]
    vbuf = np.empty(n, dtype=np.complex128)
    wbuf = np.empty(n, dtype=np.complex128)
    for a in range(2):
        for b in range(2):
            blk = rho[a, b]
            for k in range(n):
                s = n - k
                base = goff[k]
                for m in range(s):
                    vbuf[m] = blk[m, m + k]
                for i in range(s):
                    acc = 0.0 + 0.0j
                    row = base + i * s
                    for j in range(s):
                        acc += gflat[row + j] * vbuf[j]
                    wbuf[i] = acc
                for m in range(s):
                    blk[m, m + k] = wbuf[m]
                if k > 0:
                    for m in range(s):
                        vbuf[m] = blk[m + k, m]
                    for i in range(s):
                        acc = 0.0 + 0.0j
                        row = base + i * s
                        for j in range(s):
                            acc += gflat[row + j] * vbuf[j]
                        wbuf[i] = acc
                    for m in range(s):
                        blk[m + k, m] = wbuf[m]


@_jit
def _apply_gth(rho, t4):
    n = rho.shape[2]
    t00 = rho[0, 0].copy()
    t01 = rho[0, 1].copy()
    t10 = rho[1, 0].copy()
    t11 = rho[1, 1].copy()
    for a in range(2):
        for b in range(2):
            acc = np.zeros((n, n), dtype=np.complex128)
            acc += t4[a, b, 0, 0] * t00
            acc += t4[a, b, 0, 1] * t01
            acc += t4[a, b, 1, 0] * t10
            acc += t4[a, b, 1, 1] * t11
            rho[a, b] = acc


@_jit
def _diag_block_traces(rho, xmat, ndiag):
    """Per-block (a=0,1) traces of 1, n-hat and X over the diagonal qubit blocks."""
    n = rho.shape[2]
    tr = np.zeros(2)
    trn = np.zeros(2)
    trx = np.zeros(2)
    for a in range(2):
        s0 = 0.0
        s1 = 0.0
        s2 = 0.0
        for i in range(n):
            s0 += rho[a, a, i, i].real
            s1 += ndiag[i] * rho[a, a, i, i].real
            for j in range(n):
                s2 += (xmat[i, j] * rho[a, a, j, i]).real
        tr[a] = s0
        trn[a] = s1
        trx[a] = s2
    return tr, trn, trx


@_jit
def _rotated_energy(rho, xmat, ndiag, eps, gamma_c, omega0):
    """<H> with H = blockdiag(+eps/2 + w0 n + G X, -eps/2 + w0 n - G X) (rotated frame)."""
    tr, trn, trx = _diag_block_traces(rho, xmat, ndiag)
    return (0.5 * eps * (tr[0] - tr[1])
            + omega0 * (trn[0] + trn[1])
            + gamma_c * (trx[0] - trx[1]))


@_jit
def _lab_components(rho, xmat, ndiag, phi):
    """(<sz(phi) (x) 1>, <sz(phi) (x) X>, <1 (x) n-hat>) in the computational frame."""
    n = rho.shape[2]
    c = np.cos(phi)
    s = np.sin(phi)
    # sz(phi) = [[c, s], [s, -c]]
    z00, z01, z10, z11 = c, s, s, -c
    tr = np.zeros((2, 2), dtype=np.complex128)
    trx = np.zeros((2, 2), dtype=np.complex128)
    nexp = 0.0
    for a in range(2):
        for b in range(2):
            s0 = 0.0 + 0.0j
            s1 = 0.0 + 0.0j
            for i in range(n):
                s0 += rho[a, b, i, i]
                for j in range(n):
                    s1 += xmat[i, j] * rho[a, b, j, i]
            tr[a, b] = s0
            trx[a, b] = s1
    for a in range(2):
        nexp += np.sum(ndiag * np.real(np.diag(rho[a, a])))
    zexp = (z00 * tr[0, 0] + z01 * tr[1, 0] + z10 * tr[0, 1] + z11 * tr[1, 1]).real
    zxexp = (z00 * trx[0, 0] + z01 * trx[1, 0] + z10 * trx[0, 1] + z11 * trx[1, 1]).real
    return zexp, zxexp, nexp


@_jit
def _lab_energy(rho, xmat, ndiag, phi, eps, gamma_c, omega0):
    zexp, zxexp, nexp = _lab_components(rho, xmat, ndiag, phi)
    return 0.5 * eps * zexp + gamma_c * zxexp + omega0 * nexp


@_jit
def _kahan_add(cums, comps, idx, value):
    y = value - comps[idx]
    t = cums[idx] + y
    comps[idx] = (t - cums[idx]) - y
    cums[idx] = t


@_jit
def _min_eig(rho):
    n = rho.shape[2]
    m = np.empty((2 * n, 2 * n), dtype=np.complex128)
    for a in range(2):
        for b in range(2):
            m[a * n:(a + 1) * n, b * n:(b + 1) * n] = rho[a, b]
    m = 0.5 * (m + m.conj().T)
    return np.linalg.eigvalsh(m)[0]


# Ledger sample columns.
COL_T = 0
COL_TRACE = 1
COL_H_S = 2
COL_H_INT = 3
COL_H_OSC = 4
COL_E_DEPH = 5
COL_DE_OSC = 6
COL_DE_HOT = 7
COL_DE_COLD = 8
COL_W = 9
COL_P_E = 10
COL_MIN_EIG = 11
N_COLS = 12

# Indices into the running-sum array.
CUM_DE_OSC = 0
CUM_DE_HOT = 1
CUM_DE_COLD = 2
CUM_W = 3


@_jit
def stroke_loop(rho, dt, t0,
                phi_mid, eps_mid, phi_edge, eps_edge, is_ramp,
                up_half, um_half, gosc_flat, gosc_off, use_gosc, gth4, th_channel,
                xmat, ndiag, gamma_c, omega0,
                sample_steps, cums, comps, pos_tol,
                out, states_out, retain):
    """Evolve one stroke in place; returns -1 on success, else the failing step."""
    n_steps = phi_mid.shape[0]
    updag = np.ascontiguousarray(up_half.conj().T)
    umdag = np.ascontiguousarray(um_half.conj().T)
    sp = 0
    for k in range(n_steps):
        phi = phi_mid[k]
        eps = eps_mid[k]
        if is_ramp:
            de = (_lab_energy(rho, xmat, ndiag, phi, eps, gamma_c, omega0)
                  - _lab_energy(rho, xmat, ndiag, phi_edge[k], eps_edge[k], gamma_c, omega0))
            _kahan_add(cums, comps, CUM_W, de)
        c = np.cos(0.5 * phi)
        s = np.sin(0.5 * phi)
        r = np.empty((2, 2))
        r[0, 0] = c
        r[0, 1] = s
        r[1, 0] = s
        r[1, 1] = -c
        _rotate(rho, r)
        phase = np.exp(-0.5j * eps * dt)
        _half_unitary(rho, up_half, updag, um_half, umdag, phase)
        if use_gosc:
            e0 = _rotated_energy(rho, xmat, ndiag, eps, gamma_c, omega0)
            _apply_gosc(rho, gosc_flat, gosc_off)
            e1 = _rotated_energy(rho, xmat, ndiag, eps, gamma_c, omega0)
            _kahan_add(cums, comps, CUM_DE_OSC, e1 - e0)
        if th_channel > 0:
            e0 = _rotated_energy(rho, xmat, ndiag, eps, gamma_c, omega0)
            _apply_gth(rho, gth4)
            e1 = _rotated_energy(rho, xmat, ndiag, eps, gamma_c, omega0)
            if th_channel == 1:
                _kahan_add(cums, comps, CUM_DE_HOT, e1 - e0)
            else:
                _kahan_add(cums, comps, CUM_DE_COLD, e1 - e0)
        _half_unitary(rho, up_half, updag, um_half, umdag, phase)
        _rotate(rho, r)
        if is_ramp:
            de = (_lab_energy(rho, xmat, ndiag, phi_edge[k + 1], eps_edge[k + 1], gamma_c, omega0)
                  - _lab_energy(rho, xmat, ndiag, phi, eps, gamma_c, omega0))
            _kahan_add(cums, comps, CUM_W, de)
        if sp < sample_steps.shape[0] and sample_steps[sp] == k:
            t = t0 + (k + 1) * dt
            phi1 = phi_edge[k + 1]
            eps1 = eps_edge[k + 1]
            zexp, zxexp, nexp = _lab_components(rho, xmat, ndiag, phi1)
            trace = 0.0
            for a in range(2):
                for i in range(rho.shape[2]):
                    trace += rho[a, a, i, i].real
            out[sp, COL_T] = t
            out[sp, COL_TRACE] = trace
            out[sp, COL_H_S] = 0.5 * eps1 * zexp
            out[sp, COL_H_INT] = gamma_c * zxexp
            out[sp, COL_H_OSC] = omega0 * nexp
            out[sp, COL_E_DEPH] = omega0 * nexp - cums[CUM_DE_OSC]
            out[sp, COL_DE_OSC] = cums[CUM_DE_OSC]
            out[sp, COL_DE_HOT] = cums[CUM_DE_HOT]
            out[sp, COL_DE_COLD] = cums[CUM_DE_COLD]
            out[sp, COL_W] = cums[CUM_W]
            out[sp, COL_P_E] = 0.5 * (1.0 + zexp / max(trace, 1e-300))
            lam = _min_eig(rho)
            out[sp, COL_MIN_EIG] = lam
            if retain:
                states_out[sp] = rho
            sp += 1
            if lam < -pos_tol:
                return k
    return -1


def observable_row(rho, t, phi, eps, gamma_c, omega0, xmat, ndiag, cums):
    """One ledger row computed outside the kernel (used for t=0 / boundary samples)."""
    zexp, zxexp, nexp = _lab_components(rho, xmat, ndiag, phi)
    trace = float(np.real(rho[0, 0].trace() + rho[1, 1].trace()))
    row = np.empty(N_COLS)
    row[COL_T] = t
    row[COL_TRACE] = trace
    row[COL_H_S] = 0.5 * eps * zexp
    row[COL_H_INT] = gamma_c * zxexp
    row[COL_H_OSC] = omega0 * nexp
    row[COL_E_DEPH] = omega0 * nexp - cums[CUM_DE_OSC]
    row[COL_DE_OSC] = cums[CUM_DE_OSC]
    row[COL_DE_HOT] = cums[CUM_DE_HOT]
    row[COL_DE_COLD] = cums[CUM_DE_COLD]
    row[COL_W] = cums[CUM_W]
    row[COL_P_E] = 0.5 * (1.0 + zexp / trace)
    row[COL_MIN_EIG] = _min_eig(rho)
    return row
