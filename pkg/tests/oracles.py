"""Independent reference implementations used by the tests.

Nothing here imports the package: each function is written from the
defining formula with explicit loops or scipy's matrix exponential.
"""
import itertools
import math

import numpy as np
from scipy.linalg import expm


def ptrace_loops(rho, dims, keep):
    """Partial trace by summing over basis indices of the traced factors."""
    dims = list(dims)
    keep = sorted(keep)
    traced = [i for i in range(len(dims)) if i not in keep]
    kd = [dims[i] for i in keep]
    m = int(np.prod(kd))
    out = np.zeros((m, m), dtype=complex)

    def flat(idx):
        k = 0
        for i, d in zip(idx, dims):
            k = k * d + i
        return k

    for a in itertools.product(*[range(d) for d in kd]):
        for b in itertools.product(*[range(d) for d in kd]):
            s = 0j
            for t in itertools.product(*[range(dims[i]) for i in traced]):
                ia = [0] * len(dims)
                ib = [0] * len(dims)
                for pos, i in enumerate(keep):
                    ia[i], ib[i] = a[pos], b[pos]
                for pos, i in enumerate(traced):
                    ia[i] = ib[i] = t[pos]
                s += rho[flat(ia), flat(ib)]
            ra = 0
            rb = 0
            for pos in range(len(kd)):
                ra = ra * kd[pos] + a[pos]
                rb = rb * kd[pos] + b[pos]
            out[ra, rb] = s
    return out


def unitary_evolve(H, rho, t):
    U = expm(-1j * H * t)
    return U @ rho @ U.conj().T


def vn_entropy(rho):
    w = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    w = w[w > 1e-300]
    return float(-np.sum(w * np.log(w)))


def lindblad_superop(H, jumps):
    """Column-stacking generator: vec(d rho/dt) = S vec(rho)."""
    n = H.shape[0]
    eye = np.eye(n)
    S = -1j * (np.kron(eye, H) - np.kron(H.T, eye))
    for rate, L in jumps:
        LdL = L.conj().T @ L
        S = S + rate * (np.kron(L.conj(), L) - 0.5 * np.kron(eye, LdL) - 0.5 * np.kron(LdL.T, eye))
    return S


def lindblad_apply(H, jumps, rho):
    out = -1j * (H @ rho - rho @ H)
    for rate, L in jumps:
        Ld = L.conj().T
        out = out + rate * (L @ rho @ Ld - 0.5 * (Ld @ L @ rho + rho @ Ld @ L))
    return out


def lindblad_evolve(H, jumps, rho, t):
    S = lindblad_superop(H, jumps)
    v = rho.reshape(-1, order="F")
    return (expm(S * t) @ v).reshape(rho.shape, order="F")


def reset_loops(rho, dims, index, tau):
    """tau on factor ``index`` tensored with the trace of ``rho`` over it."""
    dims = list(dims)
    n = int(np.prod(dims))
    out = np.zeros((n, n), dtype=complex)

    def split(k):
        idx = []
        for d in reversed(dims):
            idx.append(k % d)
            k //= d
        return idx[::-1]

    def flat(idx):
        k = 0
        for i, d in zip(idx, dims):
            k = k * d + i
        return k

    for r in range(n):
        for c in range(n):
            ir, ic = split(r), split(c)
            s = 0j
            for t in range(dims[index]):
                jr, jc = list(ir), list(ic)
                jr[index] = jc[index] = t
                s += rho[flat(jr), flat(jc)]
            out[r, c] = tau[ir[index], ic[index]] * s
    return out


def thermal_ground(x):
    return 1.0 / (1.0 + math.exp(-x))


def qubit_work_excited_beta1():
    # F(rho) = 1 for |1><1| (pure, zero entropy); F(tau) = -ln Z with Z = 1 + e^-1
    return 1.0 + math.log(1.0 + math.exp(-1.0))


def engine_initial_power(g, eps, theta, r1, r2, N):
    return 2 * g * eps * math.sin(theta) * math.sqrt(r1 * (1 - r1) * r2 * (1 - r2)) * (N - 1) / N


def engine_moments_direct(rho, lo, hi, eps=1.0):
    """Moment sums with explicit loops over (qubit1, qubit2, level)."""
    L = hi - lo + 1

    def idx(a, b, n):
        return (2 * a + b) * L + (n - lo)

    Delta = 0j
    alpha = 0j
    for n in range(lo, hi):
        x = rho[idx(0, 1, n), idx(1, 0, n + 1)]
        Delta += x - np.conj(x)
        alpha += n * (x - np.conj(x))
    G1 = G2 = eW = A = mb = mc = md = 0.0
    for n in range(lo, hi + 1):
        p = {ab: rho[idx(*ab, n), idx(*ab, n)].real for ab in ((0, 0), (0, 1), (1, 0), (1, 1))}
        G1 += p[(0, 0)] + p[(0, 1)]
        G2 += p[(0, 0)] + p[(1, 0)]
        tot = sum(p.values())
        eW += eps * n * tot
        A += eps ** 2 * n * n * tot
        mb += n * (p[(0, 0)] + p[(0, 1)])
        mc += (n - 1) * (p[(0, 0)] + p[(1, 0)])
        md += p[(0, 0)]
    return {"Delta": (1j * Delta).real, "Gamma1": G1, "Gamma2": G2, "e_W": eW, "A": A,
            "alpha": (1j * alpha).real, "m_b": mb, "m_c": mc, "m_d": md}
