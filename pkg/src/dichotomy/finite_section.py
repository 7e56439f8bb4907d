"""Finite sections of H_omega, termwise application, Weyl residuals and a Floquet oracle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .cocycle import propagate_normalized, transfer
from .model import JacobiFamily, orbit_fields

FLOQUET_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class TruncatedOperator:
    """Dirichlet section of H_omega on sites [-N, N]; site n occupies rows (n + N) l ... (n + N + 1) l - 1."""

    center: object
    N: int
    l: int
    matrix: np.ndarray

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def banded(self) -> np.ndarray:
        """Lower banded storage with bandwidth 2l - 1, as used by scipy's banded eigensolvers."""
        A = self.matrix
        u = 2 * self.l - 1
        n = A.shape[0]
        out = np.zeros((u + 1, n))
        for k in range(u + 1):
            out[k, : n - k] = np.diagonal(A, -k)
        return out

    def block(self, p: int, q: int, M=None) -> np.ndarray:
        M = self.matrix if M is None else M
        i, j = (p + self.N) * self.l, (q + self.N) * self.l
        return M[i: i + self.l, j: j + self.l]


def truncate(f: JacobiFamily, p, N: int) -> TruncatedOperator:
    if N < 0:
        raise ValueError("N must be >= 0")
    l = f.l
    D, V = orbit_fields(f, p, -N, N + 1)
    size = (2 * N + 1) * l
    H = np.zeros((size, size))
    for k in range(2 * N + 1):
        s = slice(k * l, (k + 1) * l)
        H[s, s] = V[k]
        if k < 2 * N:
            t = slice((k + 1) * l, (k + 2) * l)
            H[s, t] = D[k]
            H[t, s] = D[k]
    return TruncatedOperator(f.base.point(p), int(N), l, H)


def truncated_spectrum(t: TruncatedOperator) -> np.ndarray:
    """All eigenvalues, ascending."""
    return linalg.eigvals_banded(t.banded(), lower=True)


def bulk_spectrum(t: TruncatedOperator, weight: float = 0.25) -> np.ndarray:
    """Eigenvalues whose eigenvectors put at least ``weight`` of their mass on the middle half.

    This drops states bound to the Dirichlet boundary, which can sit in
    spectral gaps of the infinite operator.
    """
    w, vecs = linalg.eig_banded(t.banded(), lower=True)
    l, N = t.l, t.N
    sites = np.arange(-N, N + 1).repeat(l)
    middle = np.abs(sites) <= N / 2
    mass = np.sum(np.abs(vecs[middle]) ** 2, axis=0)
    return w[mass >= weight]


def apply(f: JacobiFamily, p, values, start: int = 0):
    """(H_omega u) for u supported on [start, start + len(values) - 1].

    Returns ``(start - 1, out)`` where ``out`` covers the support grown by
    one site on each side.
    """
    u = np.asarray(values)
    if u.ndim == 1:
        u = u.reshape(-1, f.l) if f.l > 1 else u[:, None]
    k = u.shape[0]
    lo = start - 1
    D, V = orbit_fields(f, p, lo - 1, lo + k + 2)  # D[i] = D(T^{lo-1+i} p)
    pad = np.zeros((k + 4, f.l), dtype=np.result_type(u, float))
    pad[2: k + 2] = u
    out = np.zeros((k + 2, f.l), dtype=pad.dtype)
    for j in range(k + 2):
        i = j + 1  # index of site lo + j in D, V and pad
        out[j] = D[i - 1] @ pad[i - 1] + D[i] @ pad[i + 1] + V[i] @ pad[i]
    return lo, out


def _seed_values(f: JacobiFamily, p, z, L: int, seed):
    s = np.asarray(seed)
    l = f.l
    if s.ndim == 1 and s.shape[0] == 2 * l:
        # cocycle vector (u_1, D(p) u_0)
        D0, _ = orbit_fields(f, p, 0, 1)
        u1 = s[:l]
        u0 = np.linalg.solve(D0[0], s[l:])
        lo, hi = min(-L, 0), max(L, 1)
        u = propagate_normalized(f, z, p, u0, u1, (lo, hi))
        return u[-L - lo: L - lo + 1]
    s = s.reshape(2 * L + 1, l)
    return s


def weyl_residual(f: JacobiFamily, p, z, L: int, seed) -> float:
    """||(H_omega - z) u^(L)|| / ||u^(L)|| for the seed cut off outside [-L, L].

    ``seed`` is either a cocycle vector (u_1, D(omega) u_0) of length 2l, which
    is propagated to a solution (its states are A_n(z, T omega) seed), or explicit values on [-L, L] with shape
    (2L + 1, l).
    """
    L = int(L)
    if L < 0:
        raise ValueError("L must be >= 0")
    u = _seed_values(f, p, z, L, seed)
    norm = np.linalg.norm(u)
    if not norm > 0:
        raise ValueError("seed vanishes on [-L, L]")
    u = u / norm
    lo, Hu = apply(f, p, u, -L)
    Hu[1:-1] -= z * u
    return float(np.linalg.norm(Hu))


def periodic_monodromy_oracle(f: JacobiFamily, z) -> bool:
    """Floquet test: does the monodromy over one period have a unit-modulus eigenvalue?

    Eigenvalues mu are recovered from the eigenvalues w of M + M^{-1} via
    mu + 1/mu = w, which stays well conditioned at band edges where M has a
    Jordan block.
    """
    if not f.base.is_cycle:
        raise ValueError("monodromy oracle needs a periodic-cycle base")
    M = transfer(f, z, 0, f.base.period)
    w = np.linalg.eigvals(M + np.linalg.inv(M)).astype(complex)
    root = np.sqrt(w * w - 4.0)
    mu = np.concatenate([(w + root) / 2.0, (w - root) / 2.0])
    return bool(np.any(np.abs(np.abs(mu) - 1.0) <= FLOQUET_TOL))
