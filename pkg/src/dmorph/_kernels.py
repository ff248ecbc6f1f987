"""Compiled inner loops for piecewise-constant propagation.

Every interval Hamiltonian ``H_k = H0 - mu * e_k`` is real symmetric, so its
eigenvectors are real.  Consecutive intervals differ only slightly, which makes
a warm-started cyclic Jacobi sweep far cheaper than a LAPACK call per 5x5 matrix.
"""

import numpy as np
from numba import njit

_MAX_SWEEPS = 40


@njit(cache=True)
def _jacobi(A, V):
    n = A.shape[0]
    scale = 0.0
    for a in range(n):
        for b in range(n):
            scale += A[a, b] * A[a, b]
    tiny = 1e-36 * (scale + 1e-300)
    for sweep in range(_MAX_SWEEPS):
        off = 0.0
        for a in range(n):
            for b in range(a + 1, n):
                off += A[a, b] * A[a, b]
        if off <= tiny:
            return sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq * apq <= 1e-40 * tiny:
                    A[p, q] = 0.0
                    A[q, p] = 0.0
                    continue
                theta = 0.5 * (A[q, q] - A[p, p]) / apq
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                A[p, p] -= t * apq
                A[q, q] += t * apq
                A[p, q] = 0.0
                A[q, p] = 0.0
                for r in range(n):
                    if r == p or r == q:
                        continue
                    arp = A[r, p]
                    arq = A[r, q]
                    A[r, p] = c * arp - s * arq
                    A[p, r] = A[r, p]
                    A[r, q] = s * arp + c * arq
                    A[q, r] = A[r, q]
                for r in range(n):
                    vrp = V[r, p]
                    vrq = V[r, q]
                    V[r, p] = c * vrp - s * vrq
                    V[r, q] = s * vrp + c * vrq
    return -1


@njit(cache=True)
def _orthonormalize(V):
    # modified Gram-Schmidt on columns; stops slow drift of the warm start
    n = V.shape[0]
    for a in range(n):
        for b in range(a):
            d = 0.0
            for r in range(n):
                d += V[r, a] * V[r, b]
            for r in range(n):
                V[r, a] -= d * V[r, b]
        nrm = 0.0
        for r in range(n):
            nrm += V[r, a] * V[r, a]
        nrm = np.sqrt(nrm)
        for r in range(n):
            V[r, a] /= nrm


@njit(cache=True)
def eigensystem(h0, mu, em):
    """Eigenvalues/vectors of ``diag(h0) - mu*e`` for every interval value ``e``."""
    m = em.shape[0]
    n = h0.shape[0]
    lam = np.empty((m, n))
    vecs = np.empty((m, n, n))
    prev = np.eye(n)
    H = np.empty((n, n))
    tmp = np.empty((n, n))
    A = np.empty((n, n))
    for k in range(m):
        e = em[k]
        for a in range(n):
            for b in range(n):
                H[a, b] = -mu[a, b] * e
            H[a, a] += h0[a]
        # A = prev^T H prev
        for a in range(n):
            for b in range(n):
                s = 0.0
                for r in range(n):
                    s += H[a, r] * prev[r, b]
                tmp[a, b] = s
        for a in range(n):
            for b in range(a, n):
                s = 0.0
                for r in range(n):
                    s += prev[r, a] * tmp[r, b]
                A[a, b] = s
                A[b, a] = s
        W = prev.copy()
        if _jacobi(A, W) < 0:
            raise RuntimeError("Jacobi eigensolver did not converge")
        _orthonormalize(W)
        for a in range(n):
            lam[k, a] = A[a, a]
        vecs[k] = W
        prev = W
    return lam, vecs


@njit(cache=True)
def _step_vector(lam_k, V_k, dt, psi, out):
    # out = V diag(exp(-i lam dt)) V^T psi
    n = lam_k.shape[0]
    tmp = np.empty(n, dtype=np.complex128)
    for a in range(n):
        s = 0j
        for b in range(n):
            s += V_k[b, a] * psi[b]
        tmp[a] = s * np.exp(-1j * lam_k[a] * dt)
    for a in range(n):
        s = 0j
        for b in range(n):
            s += V_k[a, b] * tmp[b]
        out[a] = s


@njit(cache=True)
def states(lam, vecs, dt, psi0):
    """State vectors at every grid point, starting from ``psi0``."""
    m, n = lam.shape
    psi = np.empty((m + 1, n), dtype=np.complex128)
    psi[0] = psi0
    for k in range(m):
        _step_vector(lam[k], vecs[k], dt, psi[k], psi[k + 1])
    return psi


@njit(cache=True)
def final_state(lam, vecs, dt, psi0):
    m, n = lam.shape
    cur = psi0.copy()
    nxt = np.empty(n, dtype=np.complex128)
    for k in range(m):
        _step_vector(lam[k], vecs[k], dt, cur, nxt)
        cur, nxt = nxt, cur
    return cur


@njit(cache=True)
def propagators(lam, vecs, dt):
    """Cumulative propagators ``U(t_k, 0)`` for k = 0..m."""
    m, n = lam.shape
    U = np.empty((m + 1, n, n), dtype=np.complex128)
    for a in range(n):
        for b in range(n):
            U[0, a, b] = 1.0 if a == b else 0.0
    tmp = np.empty((n, n), dtype=np.complex128)
    for k in range(m):
        Vk = vecs[k]
        for a in range(n):
            ph = np.exp(-1j * lam[k, a] * dt)
            for b in range(n):
                s = 0j
                for r in range(n):
                    s += Vk[r, a] * U[k, r, b]
                tmp[a, b] = s * ph
        for a in range(n):
            for b in range(n):
                s = 0j
                for r in range(n):
                    s += Vk[a, r] * tmp[r, b]
                U[k + 1, a, b] = s
    return U


@njit(cache=True)
def _divided_difference(la, lb, pa, pb, dt):
    # (exp(-i la dt) - exp(-i lb dt)) / (la - lb), stable as la -> lb
    x = 0.5 * (la - lb) * dt
    if abs(x) > 1e-3:
        return (pa - pb) * (1.0 / (la - lb))
    x2 = x * x
    sinc = 1.0 - x2 / 6.0 + x2 * x2 / 120.0
    return -1j * dt * np.exp(-0.5j * (la + lb) * dt) * sinc


@njit(cache=True)
def interval_gradient(lam, vecs, mu, dt, i, f):
    """Amplitude <f|U(T,0)|i> and the exact dP/de_k for every interval value e_k.

    Uses the divided-difference (Daleckii-Krein) form of the derivative of each
    step exponential, so the result is the derivative of the discretized
    probability, not a sampled continuum formula.
    """
    m, n = lam.shape
    psi0 = np.zeros(n, dtype=np.complex128)
    psi0[i] = 1.0
    psi = states(lam, vecs, dt, psi0)
    amp = psi[m, f]
    camp = np.conj(amp)

    row = np.zeros(n, dtype=np.complex128)
    row[f] = 1.0
    out = np.empty(m)
    p = np.empty(n, dtype=np.complex128)
    q = np.empty(n, dtype=np.complex128)
    ph = np.empty(n, dtype=np.complex128)
    muV = np.empty((n, n))
    for k in range(m - 1, -1, -1):
        Vk = vecs[k]
        lk = lam[k]
        for a in range(n):
            ph[a] = np.exp(-1j * lk[a] * dt)
            sp = 0j
            sq = 0j
            for b in range(n):
                sp += row[b] * Vk[b, a]
                sq += Vk[b, a] * psi[k, b]
            p[a] = sp
            q[a] = sq
        for a in range(n):
            for b in range(n):
                s = 0.0
                for r in range(n):
                    s += mu[a, r] * Vk[r, b]
                muV[a, b] = s
        acc = 0j
        for a in range(n):
            for b in range(n):
                x_ab = 0.0
                for r in range(n):
                    x_ab += Vk[r, a] * muV[r, b]
                # dH/de = -mu
                acc -= p[a] * _divided_difference(lk[a], lk[b], ph[a], ph[b], dt) * x_ab * q[b]
        out[k] = 2.0 * (camp * acc).real
        for a in range(n):
            p[a] *= ph[a]
        for a in range(n):
            s = 0j
            for b in range(n):
                s += p[b] * Vk[a, b]
            row[a] = s
    return amp, out
