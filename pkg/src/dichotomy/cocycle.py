"""The cocycle A_z, transfer matrices, and stabilized long products.

A long product is stored in the graded form

    A_k = Q_k diag(exp(g_k)) N_k,

with Q_k unitary, g_k a real vector of row scales and N_k a matrix with unit
rows.  Each step re-orthogonalizes with a QR factorization and moves all
growth into g, so the representation never overflows.  Singular values are
recovered from the graded factor by splitting its rows into scale clusters.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import JacobiFamily, eval_fields, orbit_fields

OVERFLOW_NORM = 1e150
DET_TOL = 1e-8
CLUSTER_GAP = 18.0


class ConditioningError(ValueError):
    """D is numerically singular somewhere along the requested orbit."""


class TransferOverflowError(OverflowError):
    """Raw product is too large; use ``stabilized_chain`` instead."""


def work_dtype(z) -> type:
    """Real arithmetic on the real axis, complex otherwise."""
    return float if complex(z).imag == 0.0 else complex


def _scalar(z, dtype):
    return complex(z).real if dtype is float else complex(z)


def _blocks(D, V, z, dtype, f: JacobiFamily, where) -> np.ndarray:
    l = D.shape[-1]
    s = np.linalg.svd(D, compute_uv=False)[..., -1]
    bad = np.nonzero(s <= f.invertibility_threshold)[0]
    if bad.size:
        raise ConditioningError(f"D is numerically singular at {where(int(bad[0]))!r} "
                                f"(smallest singular value {s[bad[0]]:.3g})")
    Dinv = np.linalg.inv(D)
    zz = _scalar(z, dtype)
    A = np.zeros(D.shape[:-2] + (2 * l, 2 * l), dtype=dtype)
    A[..., :l, :l] = zz * Dinv - Dinv @ V
    A[..., :l, l:] = -Dinv
    A[..., l:, :l] = D
    return A


def _check_unimodular(A: np.ndarray, where) -> None:
    det = np.linalg.det(A)
    err = np.abs(det - 1.0)
    bad = np.nonzero(err >= DET_TOL)[0] if det.ndim else ([0] if err >= DET_TOL else [])
    if len(bad):
        i = int(bad[0])
        raise ConditioningError(f"cocycle determinant drifted to {np.ravel(det)[i]:.12g} at {where(i)!r}")


def cocycle_matrix(f: JacobiFamily, z, p) -> np.ndarray:
    """A_z(p) = [[D^-1 (z - V), -D^-1], [D, 0]]."""
    D, V = eval_fields(f, p)
    A = _blocks(D[None], V[None], z, work_dtype(z), f, lambda i: p)[0]
    _check_unimodular(A[None], lambda i: p)
    return A


def cocycle_batch(f: JacobiFamily, z, p, start: int, stop: int, inverse: bool = False) -> np.ndarray:
    """A_z(T^k p) for k in [start, stop), or their inverses, shape (n, 2l, 2l)."""
    D, V = orbit_fields(f, p, start, stop)
    base = f.base

    def where(i):
        return base.advance(p, start + i)

    A = _blocks(D, V, z, work_dtype(z), f, where)
    if A.shape[0] == 0:
        return A
    _check_unimodular(A, where)
    if inverse:
        A = np.linalg.inv(A)
        _check_unimodular(A, where)
    return A


def transfer(f: JacobiFamily, z, p, n: int) -> np.ndarray:
    """Raw transfer matrix A_n(z, p).

    n >= 1: A(T^{n-1}p) ... A(p);  n = 0: identity;
    n <= -1: A^{-1}(T^n p) ... A^{-1}(T^{-1} p).
    """
    n = int(n)
    m = 2 * f.l
    out = np.eye(m, dtype=work_dtype(z))
    if n == 0:
        return out
    if n > 0:
        mats = cocycle_batch(f, z, p, 0, n)
        order = range(n)
    else:
        mats = cocycle_batch(f, z, p, n, 0, inverse=True)
        order = range(-n - 1, -1, -1)  # T^{-1} first
    for k in order:
        out = mats[k] @ out
        if np.max(np.abs(out)) > OVERFLOW_NORM:
            raise TransferOverflowError(
                f"transfer product exceeds {OVERFLOW_NORM:.0e} at |n|={n}; use stabilized_chain")
    return out


# ------------------------------------------------------------ graded products


def _graded_step(M, Q, g, N):
    """One step A -> M A of the graded representation, batched over axis 0."""
    Qn, T = np.linalg.qr(M @ Q)
    absT = np.abs(T)
    with np.errstate(divide="ignore"):
        cand = np.log(absT) + g[:, None, :]
    gi = np.max(cand, axis=2)
    # angle avoids overflow in T / |T| for subnormal entries
    phase = np.exp(1j * np.angle(T)) if np.iscomplexobj(T) else np.sign(T)
    phase = np.where(absT > 0, phase, 0)
    K = phase * np.exp(cand - gi[:, :, None])
    Nn = K @ N
    norms = np.linalg.norm(Nn, axis=2)
    return Qn, gi + np.log(norms), Nn / norms[:, :, None]


def graded_log_svals(g: np.ndarray, N: np.ndarray) -> np.ndarray:
    """Log singular values (descending) of diag(exp(g)) N.

    Rows are grouped into clusters separated by scale gaps larger than
    CLUSTER_GAP.  Each cluster is projected onto the orthogonal complement of
    the row space of the larger clusters and decomposed at its own scale.
    """
    order = np.argsort(-g, kind="stable")
    gs = g[order]
    rows = N[order]
    m = len(g)
    cuts = [0] + [i for i in range(1, m) if gs[i - 1] - gs[i] > CLUSTER_GAP] + [m]
    basis = np.zeros((0, m), dtype=N.dtype)
    out = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        top = gs[a]
        B = np.exp(gs[a:b] - top)[:, None] * rows[a:b]
        if basis.shape[0]:
            B = B - (B @ basis.conj().T) @ basis
        _, s, vh = np.linalg.svd(B)
        with np.errstate(divide="ignore"):
            out.append(top + np.log(s))
        basis = np.vstack([basis, vh[: b - a]])
    return np.sort(np.concatenate(out))[::-1]


@dataclass
class TransferChain:
    direction: str
    steps: int
    checkpoints: np.ndarray
    log_svals: np.ndarray
    triangular_log: np.ndarray
    orthogonal_factor: np.ndarray
    z: complex = 0.0

    def growth_slopes(self) -> np.ndarray:
        """Least-squares slopes of each log singular value over the second half of checkpoints."""
        k = self.checkpoints
        half = k >= k[-1] / 2.0
        if half.sum() < 2:
            return self.log_svals[-1] / max(k[-1], 1)
        x = k[half].astype(float)
        X = np.vstack([x, np.ones_like(x)]).T
        coef, *_ = np.linalg.lstsq(X, self.log_svals[half], rcond=None)
        return coef[0]


def _checkpoint_list(n: int, stride: int) -> list:
    cps = list(range(stride, n + 1, stride))
    if not cps or cps[-1] != n:
        cps.append(n)
    return cps


def _field_key(f: JacobiFamily, p, start: int, stop: int) -> bytes:
    D, V = orbit_fields(f, p, start, stop)
    return D.tobytes() + V.tobytes()


def chain_many(f: JacobiFamily, z, points: Sequence, n: int, direction: str = "forward",
               checkpoints: Optional[Sequence[int]] = None, dedupe: bool = True):
    """Graded products A_k (forward) or A_{-k} (backward) at several base points.

    Returns ``(log_svals, g, N)`` where ``log_svals`` has shape
    (len(points), len(checkpoints), 2l) and ``g``, ``N`` hold the graded
    factor at the final step.  Points whose coefficient sequences coincide
    over the horizon (constant or periodic fields) share one product.
    """
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    cps = sorted(set(int(c) for c in (checkpoints or [n])))
    if cps[0] < 1 or cps[-1] > n:
        raise ValueError("checkpoints must lie in [1, n]")
    m = 2 * f.l
    window = (0, n) if direction == "forward" else (-n, 0)

    reps, owner = [], []
    seen = {}
    for q in points:
        key = _field_key(f, q, *window) if dedupe else len(reps)
        if key not in seen:
            seen[key] = len(reps)
            reps.append(q)
        owner.append(seen[key])
    S = len(reps)
    if direction == "forward":
        mats = np.stack([cocycle_batch(f, z, q, 0, n) for q in reps], axis=1)
    else:
        # step k multiplies by A^{-1}(T^{-k} p)
        mats = np.stack([cocycle_batch(f, z, q, -n, 0, inverse=True)[::-1] for q in reps], axis=1)

    dtype = mats.dtype
    Q = np.broadcast_to(np.eye(m, dtype=dtype), (S, m, m)).copy()
    N = Q.copy()
    g = np.zeros((S, m))
    out = np.empty((S, len(cps), m))
    ci = 0
    for k in range(1, n + 1):
        Q, g, N = _graded_step(mats[k - 1], Q, g, N)
        if ci < len(cps) and cps[ci] == k:
            for s in range(S):
                out[s, ci] = graded_log_svals(g[s], N[s])
            ci += 1
    idx = np.asarray(owner)
    return out[idx], g[idx], N[idx], Q[idx], np.asarray(cps)


def stabilized_chain(f: JacobiFamily, z, p, n: int, direction: str = "forward",
                     checkpoint_stride: int = 1) -> TransferChain:
    """QR-stabilized transfer product with log singular values at every checkpoint."""
    if checkpoint_stride < 1:
        raise ValueError("checkpoint_stride must be >= 1")
    m = 2 * f.l
    cps = _checkpoint_list(int(n), int(checkpoint_stride))
    dtype = work_dtype(z)
    mats = (cocycle_batch(f, z, p, 0, n) if direction == "forward"
            else cocycle_batch(f, z, p, -n, 0, inverse=True)[::-1])
    Q = np.eye(m, dtype=dtype)[None]
    N = Q.copy()
    g = np.zeros((1, m))
    svals, glog = [], []
    ci = 0
    for k in range(1, n + 1):
        Q, g, N = _graded_step(mats[k - 1][None], Q, g, N)
        if cps[ci] == k:
            svals.append(graded_log_svals(g[0], N[0]))
            glog.append(g[0].copy())
            ci += 1
    return TransferChain(direction, int(n), np.asarray(cps), np.asarray(svals), np.asarray(glog), Q[0],
                         z=complex(z))


# ------------------------------------------------------------ solutions


def _step_data(f: JacobiFamily, z, p, lo: int, hi: int):
    D, V = orbit_fields(f, p, lo, hi)
    dtype = work_dtype(z)
    ZV = _scalar(z, dtype) * np.eye(f.l) - V
    return D, np.linalg.inv(D), ZV


def _propagate_scaled(f: JacobiFamily, z, p, u0, u1, lo: int, hi: int):
    """Solution on [lo, hi] as (w, s) with u_n = w_n exp(s_n); renormalized on the fly."""
    if not lo <= 0 < 1 <= hi:
        raise ValueError("range must contain 0 and 1")
    dtype = work_dtype(z)
    if dtype is float and (np.iscomplexobj(u0) or np.iscomplexobj(u1)):
        dtype = complex
    u0 = np.asarray(u0, dtype=dtype).reshape(f.l)
    u1 = np.asarray(u1, dtype=dtype).reshape(f.l)
    size = hi - lo + 1
    w = np.zeros((size, f.l), dtype=dtype)
    s = np.zeros(size)
    D, Dinv, ZV = _step_data(f, z, p, lo - 1, hi + 1)
    off = lo - 1  # D[n - off] = D(T^n p)
    w[-lo], w[1 - lo] = u0, u1

    # forward: u_{n+1} = D_n^{-1}((z - V_n) u_n - D_{n-1} u_{n-1})
    a, b, sc = u0.copy(), u1.copy(), 0.0
    for n in range(1, hi):
        c = Dinv[n - off] @ (ZV[n - off] @ b - D[n - 1 - off] @ a)
        big = max(np.max(np.abs(b)), np.max(np.abs(c)))
        if big > 1e100 or 0 < big < 1e-100:
            a, b, c = a / big, b / big, c / big
            sc += np.log(big)
        a, b = b, c
        w[n + 1 - lo], s[n + 1 - lo] = c, sc
    # backward: u_{n-1} = D_{n-1}^{-1}((z - V_n) u_n - D_n u_{n+1})
    a, b, sc = u1.copy(), u0.copy(), 0.0
    for n in range(0, lo, -1):
        c = Dinv[n - 1 - off] @ (ZV[n - off] @ b - D[n - off] @ a)
        big = max(np.max(np.abs(b)), np.max(np.abs(c)))
        if big > 1e100 or 0 < big < 1e-100:
            a, b, c = a / big, b / big, c / big
            sc += np.log(big)
        a, b = b, c
        w[n - 1 - lo], s[n - 1 - lo] = c, sc
    return w, s


def propagate_solution(f: JacobiFamily, z, p, u0, u1, window) -> np.ndarray:
    """Solve the eigenvalue recursion from (u_0, u_1) over ``window = (lo, hi)``.

    Returns an array of shape (hi - lo + 1, l); row ``n - lo`` holds u_n.
    """
    lo, hi = int(window[0]), int(window[1])
    w, s = _propagate_scaled(f, z, p, u0, u1, lo, hi)
    with np.errstate(over="ignore"):
        return w * np.exp(s)[:, None]


def propagate_normalized(f: JacobiFamily, z, p, u0, u1, window) -> np.ndarray:
    """Like ``propagate_solution`` but divided by exp(max scale); finite for any range."""
    lo, hi = int(window[0]), int(window[1])
    w, s = _propagate_scaled(f, z, p, u0, u1, lo, hi)
    return w * np.exp(s - s.max())[:, None]


def stack_state(f: JacobiFamily, p, u, n: int, lo: int) -> np.ndarray:
    """(u_{n+1}, D(T^n p) u_n) from a solution array whose first row is index ``lo``.

    With the operator indexed as D(T^{n-1}p) u_{n-1} + D(T^n p) u_{n+1} + V(T^n p) u_n,
    these states obey stack_state(n) = A_n(z, T p) stack_state(0), equivalently
    stack_state(n - 1) = A_n(z, p) stack_state(-1).
    """
    D, _ = eval_fields(f, f.base.advance(p, n))
    return np.concatenate([u[n + 1 - lo], D @ u[n - lo]])
