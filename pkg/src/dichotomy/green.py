"""Wronskians, decaying solution frames and the Green function built from them.

Frames are stored as F_n = exp(logscale_n) * blocks_n with unit-norm blocks,
so that values far from the origin neither overflow nor underflow.  The
adjoint used throughout is the plain transpose: on the real axis the frames
are real and it agrees with the conjugate transpose, and off the axis it keeps
G(p, q; z) analytic in z.

G is invariant under F+ -> F+ C+, F- -> F- C-, Q -> C+^T Q C-.  By default it
is evaluated in the basis normalized at r = max(p, q), where the Wronskian
is read off the orthonormal site bases and F- only travels in its decaying
direction.  Passing the origin Wronskian Q instead uses the C_0 = I frames
literally; that form loses accuracy like exp((g1 - g2)|n|) away from the
origin when channels decay at different rates g1 > g2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import pdist

from .cocycle import cocycle_batch, work_dtype
from .finite_section import truncate
from .model import JacobiFamily, orbit_fields

Q_COND_LIMIT = 1e10
TRANSVERSALITY_TOL = 1e-8
HERGLOTZ_LADDER = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
HERGLOTZ_ZERO = 1e-2
HERGLOTZ_DIVERGENT = 1e3


class FrameError(RuntimeError):
    """Decaying frames could not be built (no usable dichotomy at this z)."""


class GreenConditioningError(FrameError):
    def __init__(self, message, cond):
        super().__init__(message)
        self.cond = cond


class SingularTruncationError(RuntimeError):
    pass


def _adj(M, conjugate: bool):
    M = np.swapaxes(M, -1, -2)
    return M.conj() if conjugate else M


def _as_blocks(A, l: int) -> np.ndarray:
    A = np.asarray(A)
    if A.ndim == 1:
        return A.reshape(-1, 1, 1) if l == 1 else A.reshape(-1, l, 1)
    if A.ndim == 2:
        return A[:, :, None]
    return A


def wronskian_series(f: JacobiFamily, p, A, B, lo: int, hi: int, start: int = 0, conjugate: bool = False):
    """W_[A,B](m) = A*_{m-1} D_{m-1} B_m - A*_m D_{m-1} B_{m-1} for m in [lo, hi].

    A and B are sequences of l x c matrices (or l-vectors) with entry ``n``
    stored at position ``n - start``.
    """
    A = _as_blocks(A, f.l)
    B = _as_blocks(B, f.l)
    if lo - 1 < start or hi - start >= min(len(A), len(B)):
        raise IndexError("Wronskian window outside the given sequences")
    D, _ = orbit_fields(f, p, lo - 1, hi)
    i = np.arange(lo, hi + 1) - start
    Am, A0 = _adj(A[i - 1], conjugate), _adj(A[i], conjugate)
    return Am @ D @ B[i] - A0 @ D @ B[i - 1]


def wronskian(f: JacobiFamily, p, A, B, n: int, start: int = 0, conjugate: bool = False) -> np.ndarray:
    return wronskian_series(f, p, A, B, n, n, start, conjugate)[0]


@dataclass
class Constancy:
    drift: float
    w_scale: float
    term_scale: float

    @property
    def relative(self) -> float:
        """Drift relative to the size of the terms that enter W."""
        return self.drift / self.term_scale if self.term_scale > 0 else 0.0


def constancy_check(f: JacobiFamily, p, A, B, window, start: int = 0, conjugate: bool = False) -> Constancy:
    """Max over n, m in ``window`` of ||W(n) - W(m)|| (Frobenius).

    Also reports max ||W(n)|| and the largest norm of the two products that
    make up W, which bounds the rounding error of the evaluation.
    """
    lo, hi = int(window[0]), int(window[1])
    W = wronskian_series(f, p, A, B, lo, hi, start, conjugate)
    flat = W.reshape(len(W), -1)
    pts = np.hstack([flat.real, flat.imag]) if np.iscomplexobj(flat) else flat
    s = np.max(np.abs(pts)) if pts.size else 0.0
    drift = float(s * np.max(pdist(pts / s))) if len(pts) > 1 and s > 0 else 0.0
    Ab, Bb = _as_blocks(A, f.l), _as_blocks(B, f.l)
    D, _ = orbit_fields(f, p, lo - 1, hi)
    i = np.arange(lo, hi + 1) - start
    t1 = _block_norms(_adj(Ab[i - 1], conjugate) @ D @ Bb[i])
    t2 = _block_norms(_adj(Ab[i], conjugate) @ D @ Bb[i - 1])
    return Constancy(drift, float(np.max(_block_norms(W))), float(np.max(t1 + t2)))


def _block_norms(M: np.ndarray) -> np.ndarray:
    """Frobenius norms of a stack of blocks, scaled so squaring cannot overflow."""
    s = np.max(np.abs(M), axis=(1, 2), keepdims=True)
    s = np.where(s > 0, s, 1.0)
    return s[:, 0, 0] * np.linalg.norm(M / s, axis=(1, 2))


# ------------------------------------------------------------------ frames


@dataclass
class DecayingFrame:
    """F_n for n in [start, start + len(blocks) - 1], stored as exp(logscale_n) * blocks_n.

    ``bases[i]`` is the orthonormal 2l x l basis X_n of the stacked values
    (F_n, D(T^{n-1} p) F_{n-1}) at n = start + i, and ``R[i]`` the triangular
    factor linking sites n and n + 1: A^{-1}(T^n p) X_{n+1} = X_n R_n for
    ``plus``, A(T^n p) X_n = X_{n+1} R_n for ``minus``.
    """

    flavor: str
    start: int
    blocks: np.ndarray
    logscale: np.ndarray
    z: complex
    basepoint: object
    horizon: int = 0
    bases: Optional[np.ndarray] = None
    R: Optional[np.ndarray] = None

    @property
    def window(self) -> tuple:
        return self.start, self.start + len(self.blocks) - 1

    def F(self, n: int) -> np.ndarray:
        i = n - self.start
        if not 0 <= i < len(self.blocks):
            raise IndexError(f"site {n} outside frame window {self.window}")
        return math.exp(self.logscale[i]) * self.blocks[i]

    def values(self, lo: Optional[int] = None, hi: Optional[int] = None) -> np.ndarray:
        lo = self.start if lo is None else lo
        hi = self.window[1] if hi is None else hi
        i = np.arange(lo, hi + 1) - self.start
        with np.errstate(over="ignore"):
            return np.exp(self.logscale[i])[:, None, None] * self.blocks[i]


def _generic(m: int, l: int, dtype) -> np.ndarray:
    rng = np.random.default_rng(7)
    X = rng.standard_normal((m, l))
    if dtype is complex:
        X = X + 1j * rng.standard_normal((m, l))
    return np.linalg.qr(X)[0]


def _run(mats, X, keep: bool = False):
    """Push X through mats in order with QR after each step."""
    Xs, Rs = [], []
    for M in mats:
        X, R = np.linalg.qr(M @ X)
        if keep:
            Xs.append(X)
            Rs.append(R)
    return X, Xs, Rs


def _edge_frame(f, z, p, edge: int, flavor: str, tol: float, H0: int, Hmax: int):
    """Converged stable (plus) or unstable (minus) l-frame in the fiber over T^edge p.

    The horizon is doubled until two successive runs agree to ``tol``.
    """
    l, m = f.l, 2 * f.l
    X0 = _generic(m, l, work_dtype(z))
    prev = None
    H = H0
    while H <= Hmax:
        if flavor == "plus":
            mats = cocycle_batch(f, z, p, edge, edge + H, inverse=True)[::-1]
        else:
            mats = cocycle_batch(f, z, p, edge - H, edge)
        X, _, _ = _run(mats, X0)
        if prev is not None:
            if np.linalg.norm(prev - X @ (X.conj().T @ prev), 2) < tol:
                return X, H
        prev = X
        H *= 2
    raise FrameError(f"{flavor} frame did not converge within horizon {Hmax} at z={z}")


def _normalized(M):
    nu = np.linalg.norm(M)
    return M / nu, math.log(nu)


def build_decaying_frames(f: JacobiFamily, z, p, N: int, tol: float = 1e-13, H0: int = 32,
                          Hmax: int = 1 << 19):
    """F+ (decaying toward +infinity) and F- (decaying toward -infinity) on [-N-1, N+1].

    The stacked columns (F_n, D(T^{n-1} p) F_{n-1}) lie in the stable
    (respectively unstable) subspace over T^n p and evolve under the cocycle.
    Both frames are normalized by C_0 = I in their orthonormal site bases.
    """
    N = int(N)
    l = f.l
    lo, hi = -N - 1, N + 1

    # plus: X_k spans the stable space over T^k p; A^{-1}(T^k p) X_{k+1} = X_k R_k
    Xe, Hp = _edge_frame(f, z, p, hi, "plus", tol, H0, Hmax)
    inv = cocycle_batch(f, z, p, lo, hi, inverse=True)[::-1]
    _, Xs, Rs = _run(inv, Xe, keep=True)
    Xp = {hi: Xe}
    Rp = {}
    for j, k in enumerate(range(hi - 1, lo - 1, -1)):
        Xp[k], Rp[k] = Xs[j], Rs[j]
    plus = _assemble("plus", Xp, Rp, lo, hi, l, z, p, forward_is_inverse=True, horizon=Hp)

    # minus: A(T^k p) X_k = X_{k+1} R_k
    Xe, Hm = _edge_frame(f, z, p, lo, "minus", tol, H0, Hmax)
    fwd = cocycle_batch(f, z, p, lo, hi)
    _, Xs, Rs = _run(fwd, Xe, keep=True)
    Xm = {lo: Xe}
    Rm = {}
    for j, k in enumerate(range(lo, hi)):
        Xm[k + 1], Rm[k] = Xs[j], Rs[j]
    minus = _assemble("minus", Xm, Rm, lo, hi, l, z, p, forward_is_inverse=False, horizon=Hm)
    # horizon agreement alone is fooled by periodic elliptic products, so also
    # require the two frames to be transversal at the origin
    smin = np.linalg.svd(np.hstack([Xp[0], Xm[0]]), compute_uv=False)[-1]
    if not smin > TRANSVERSALITY_TOL:
        raise FrameError(f"stable and unstable frames are not transversal at z={z} "
                         f"(smallest singular value {smin:.2g}); no dichotomy here")
    return plus, minus


def _assemble(flavor, X, R, lo, hi, l, z, p, forward_is_inverse, horizon):
    """Coefficients C_k with Y_{k-1} = X_k C_k, C_0 = I, then F_k = top(X_k) C_k."""
    C = {0: (np.eye(l, dtype=X[0].dtype), 0.0)}
    for k in range(0, hi):  # C_{k+1} from C_k
        Ck, s = C[k]
        M = np.linalg.solve(R[k], Ck) if forward_is_inverse else R[k] @ Ck
        M, ds = _normalized(M)
        C[k + 1] = (M, s + ds)
    for k in range(-1, lo - 1, -1):  # C_k from C_{k+1}
        Ck, s = C[k + 1]
        M = R[k] @ Ck if forward_is_inverse else np.linalg.solve(R[k], Ck)
        M, ds = _normalized(M)
        C[k] = (M, s + ds)
    blocks = np.empty((hi - lo + 1, l, l), dtype=X[0].dtype)
    logs = np.empty(hi - lo + 1)
    for k in range(lo, hi + 1):
        Ck, s = C[k]
        B, ds = _normalized(X[k][:l] @ Ck)
        blocks[k - lo], logs[k - lo] = B, s + ds
    bases = np.stack([X[k] for k in range(lo, hi + 1)])
    Rs = np.stack([R[k] for k in range(lo, hi)])
    return DecayingFrame(flavor, lo, blocks, logs, complex(z), p, horizon, bases, Rs)


def wronskian_Q(f: JacobiFamily, plus: DecayingFrame, minus: DecayingFrame) -> np.ndarray:
    """Q = W_[F+, F-](0) = (F+_{-1})^T D_{-1} F-_0 - (F+_0)^T D_{-1} F-_{-1}, for the C_0 = I frames."""
    D, _ = orbit_fields(f, plus.basepoint, -1, 0)
    D = D[0]
    return plus.F(-1).T @ D @ minus.F(0) - plus.F(0).T @ D @ minus.F(-1)


def local_wronskian(plus: DecayingFrame, minus: DecayingFrame, r: int) -> np.ndarray:
    """W(r) for the frames normalized at r, i.e. F_r = top(X_r), D_{r-1} F_{r-1} = bottom(X_r).

    Uses the symmetry of D.
    """
    l = plus.bases.shape[2]
    Xp, Xm = plus.bases[r - plus.start], minus.bases[r - minus.start]
    return Xp[l:].T @ Xm[:l] - Xp[:l].T @ Xm[l:]


def _checked_inverse(Q):
    Q = np.asarray(Q)
    cond = float(np.max(np.linalg.cond(Q)))
    if not cond <= Q_COND_LIMIT:
        raise GreenConditioningError(f"Wronskian Q is ill-conditioned (cond {cond:.3g})", cond)
    return np.linalg.inv(Q)


def _check_sites(frame: DecayingFrame, *sites):
    lo, hi = frame.window
    for n in sites:
        if not lo <= n <= hi:
            raise IndexError(f"site {n} outside the frame window {frame.window}")


def _minus_down(minus: DecayingFrame, tops: np.ndarray, depth: int):
    """F- normalized at each r in ``tops`` and carried down to r - d, d = 0..depth.

    Returns (coef, logs) of shapes (depth + 1, len(tops), l, l) and
    (depth + 1, len(tops)); F-_{r-d} = exp(logs) top(X_{r-d}) coef.
    """
    l = minus.bases.shape[2]
    tops = np.asarray(tops)
    c = np.broadcast_to(np.eye(l, dtype=minus.bases.dtype), (len(tops), l, l)).copy()
    s = np.zeros(len(tops))
    coef, logs = [c], [s]
    for d in range(1, depth + 1):
        k = tops - d  # c_k = R_k^{-1} c_{k+1}
        ok = k >= minus.start
        R = minus.R[np.where(ok, k, minus.start) - minus.start]
        c = np.linalg.solve(R, c)
        nu = np.linalg.norm(c, axis=(1, 2))
        nu = np.where(ok & (nu > 0), nu, 1.0)
        c = c / nu[:, None, None]
        s = s + np.log(nu)
        coef.append(c)
        logs.append(s)
    return np.stack(coef), np.stack(logs)


def green_block(plus: DecayingFrame, minus: DecayingFrame, p: int, q: int, Q=None) -> np.ndarray:
    """G(p, q; z) = -F-_p Q^{-1} (F+_q)^T for p <= q and -F+_p (Q^T)^{-1} (F-_q)^T for p > q.

    Without ``Q`` the frames are normalized at max(p, q) and Q is their
    Wronskian there; with ``Q`` (the origin Wronskian) the C_0 = I frames
    are used as stored.
    """
    _check_sites(plus, p, q)
    _check_sites(minus, p, q)
    if Q is not None:
        Qi = _checked_inverse(Q)
        if p <= q:
            a, b, M = minus, plus, Qi
        else:
            a, b, M = plus, minus, Qi.T
        i, j = p - a.start, q - b.start
        return -math.exp(a.logscale[i] + b.logscale[j]) * (a.blocks[i] @ M @ b.blocks[j].T)
    l = plus.bases.shape[2]
    r, low = max(p, q), min(p, q)
    Qi = _checked_inverse(local_wronskian(plus, minus, r))
    coef, logs = _minus_down(minus, [r], r - low)
    Fm = minus.bases[low - minus.start][:l] @ coef[-1, 0]
    Fp = plus.bases[r - plus.start][:l]
    with np.errstate(under="ignore"):
        scale = math.exp(logs[-1, 0])
    if p <= q:
        return -scale * (Fm @ Qi @ Fp.T)
    return -scale * (Fp @ Qi.T @ Fm.T)


@dataclass
class GreenTable:
    lo: int
    hi: int
    z: complex
    blocks: np.ndarray  # (k, k, l, l), blocks[p - lo, q - lo] = G(p, q)

    def G(self, p: int, q: int) -> np.ndarray:
        return self.blocks[p - self.lo, q - self.lo]

    def to_dict(self) -> dict:
        b = np.asarray(self.blocks, dtype=complex)
        return {
            "window": [self.lo, self.hi],
            "z": [self.z.real, self.z.imag],
            "blocks": np.stack([b.real, b.imag], axis=-1).tolist(),
        }


def green_table(plus: DecayingFrame, minus: DecayingFrame, lo: int, hi: int, Q=None) -> GreenTable:
    """All G(p, q) for p, q in [lo, hi]; see ``green_block`` for the role of ``Q``."""
    _check_sites(plus, lo, hi)
    _check_sites(minus, lo, hi)
    idx = np.arange(lo, hi + 1)
    k = len(idx)
    if Q is not None:
        Qi = _checked_inverse(Q)
        Fm, Fp = minus.blocks[idx - minus.start], plus.blocks[idx - plus.start]
        sm, sp = minus.logscale[idx - minus.start], plus.logscale[idx - plus.start]
        with np.errstate(over="ignore", under="ignore"):
            upper = -np.einsum("pij,jk,qlk->pqil", Fm, Qi, Fp) * np.exp(sm[:, None] + sp[None, :])[..., None, None]
            lower = -np.einsum("pij,kj,qlk->pqil", Fp, Qi, Fm) * np.exp(sp[:, None] + sm[None, :])[..., None, None]
        mask = (idx[:, None] <= idx[None, :])[..., None, None]
        return GreenTable(lo, hi, plus.z, np.where(mask, upper, lower))
    l = plus.bases.shape[2]
    Qi = _checked_inverse(np.stack([local_wronskian(plus, minus, r) for r in idx]))
    coef, logs = _minus_down(minus, idx, k - 1)
    Tp = plus.bases[idx - plus.start][:, :l]   # top(X+_r)
    Tm = minus.bases[idx - minus.start][:, :l]  # top(X-_n)
    dtype = np.result_type(Tp, Tm, Qi)
    out = np.zeros((k, k, l, l), dtype=dtype)
    with np.errstate(under="ignore"):
        scale = np.exp(logs)
    for d in range(k):
        r = np.arange(d, k)  # positions of r; the lower site sits at r - d
        Fm = Tm[r - d] @ coef[d, r] * scale[d, r][:, None, None]
        out[r - d, r] = -(Fm @ Qi[r] @ np.swapaxes(Tp[r], 1, 2))
        if d:
            out[r, r - d] = -(Tp[r] @ np.swapaxes(Qi[r], 1, 2) @ np.swapaxes(Fm, 1, 2))
    return GreenTable(lo, hi, plus.z, out)


def verify_green_identities(f: JacobiFamily, plus: DecayingFrame, minus: DecayingFrame, n: int, Q=None):
    """Residuals of the three frame identities at site n.

    (a) F+_n Q^{-T} F-_n^T - F-_n Q^{-1} F+_n^T = 0
    (b) F+_n Q^{-T} F-_{n+1}^T - F-_n Q^{-1} F+_{n+1}^T = D_n^{-1}
    (c) F+_{n+1} Q^{-T} F-_n^T - F-_{n+1} Q^{-1} F+_n^T = -D_n^{-1}

    Without ``Q`` the frames are normalized at n + 1, F_n is obtained by one
    transport step and Q is the Wronskian there; with ``Q`` the C_0 = I
    frames and the given Q are used.
    """
    _check_sites(plus, n, n + 1)
    _check_sites(minus, n, n + 1)
    Dn, _ = orbit_fields(f, plus.basepoint, n, n + 1)
    Dinv = np.linalg.inv(Dn[0])
    if Q is None:
        l = f.l
        i = n - plus.start
        j = n - minus.start
        P1, P0 = plus.bases[i + 1][:l], plus.bases[i][:l] @ plus.R[i]
        M1, M0 = minus.bases[j + 1][:l], np.linalg.solve(minus.R[j].T, minus.bases[j][:l].T).T
        Qi = np.linalg.inv(local_wronskian(plus, minus, n + 1))
        F = {("+", 0): P0, ("+", 1): P1, ("-", 0): M0, ("-", 1): M1}

        def form(a, b):
            return F["+", a] @ Qi.T @ F["-", b].T - F["-", a] @ Qi @ F["+", b].T
    else:
        Qi = np.linalg.inv(Q)

        def form(a, b):
            i, j = n + a, n + b
            x = math.exp(plus.logscale[i - plus.start] + minus.logscale[j - minus.start])
            y = math.exp(minus.logscale[i - minus.start] + plus.logscale[j - plus.start])
            Pi, Mj = plus.blocks[i - plus.start], minus.blocks[j - minus.start]
            Mi, Pj = minus.blocks[i - minus.start], plus.blocks[j - plus.start]
            return x * (Pi @ Qi.T @ Mj.T) - y * (Mi @ Qi @ Pj.T)

    ra = np.linalg.norm(form(0, 0))
    rb = np.linalg.norm(form(0, 1) - Dinv)
    rc = np.linalg.norm(form(1, 0) + Dinv)
    return float(ra), float(rb), float(rc)


def resolvent_check(f: JacobiFamily, p, z, N_frames: int, N_truncation: int, interior_margin: int = 20) -> float:
    """Max entry difference between G and the inverse of the Dirichlet section minus z.

    Only sites at distance at least ``interior_margin`` from the truncation
    boundary are compared.
    """
    if interior_margin > N_truncation:
        raise ValueError("interior margin exceeds the truncation half-width")
    t = truncate(f, p, N_truncation)
    M = t.matrix.astype(complex if work_dtype(z) is complex else float) - z * np.eye(t.size)
    try:
        inv = np.linalg.inv(M)
        if not np.all(np.isfinite(inv)) or np.linalg.cond(M) > 1e14:
            raise np.linalg.LinAlgError("singular")
    except np.linalg.LinAlgError:
        raise SingularTruncationError(
            f"z={z} is (numerically) an eigenvalue of the N={N_truncation} section; retry with N+1") from None
    plus, minus = build_decaying_frames(f, z, p, max(N_frames, N_truncation))
    k = N_truncation - interior_margin
    table = green_table(plus, minus, -k, k)
    l = f.l
    a = (N_truncation - k) * l
    b = a + (2 * k + 1) * l
    sub = inv[a:b, a:b].reshape(2 * k + 1, l, 2 * k + 1, l).transpose(0, 2, 1, 3)
    return float(np.max(np.abs(sub - table.blocks)))


# ------------------------------------------------------------------ Herglotz


@dataclass
class HerglotzResult:
    x: float
    y: np.ndarray
    values: np.ndarray
    messages: list = field(default_factory=list)
    classification: str = "undecided"

    @property
    def limit(self) -> float:
        ok = self.values[np.isfinite(self.values)]
        return float(ok[-1]) if ok.size else float("nan")


def classify_herglotz(values: np.ndarray, zero: float = HERGLOTZ_ZERO, divergent: float = HERGLOTZ_DIVERGENT) -> str:
    """'resolvent' when the last two values are below ``zero``, 'singular' when the last
    exceeds ``divergent``, 'ac' for a finite positive limit, 'undecided' without data."""
    ok = values[np.isfinite(values)]
    if ok.size < 2:
        return "undecided"
    if ok[-1] < zero and ok[-2] < zero:
        return "resolvent"
    if ok[-1] > divergent:
        return "singular"
    return "ac"


def herglotz_indicator(f: JacobiFamily, p, x: float, y_list: Sequence[float] = HERGLOTZ_LADDER,
                       zero: float = HERGLOTZ_ZERO, divergent: float = HERGLOTZ_DIVERGENT) -> HerglotzResult:
    """Im tr[G(0, 0; x + iy) + G(1, 1; x + iy)] along a decreasing y ladder.

    A failed frame construction at some y is recorded as NaN with a message;
    the remaining values are still returned.
    """
    ys = np.asarray(list(y_list), dtype=float)
    if np.any(ys <= 0) or np.any(np.diff(ys) >= 0):
        raise ValueError("y_list must be positive and strictly decreasing")
    vals = np.full(len(ys), np.nan)
    msgs = []
    for i, y in enumerate(ys):
        z = complex(x, y)
        try:
            plus, minus = build_decaying_frames(f, z, p, 2)
            g = green_block(plus, minus, 0, 0) + green_block(plus, minus, 1, 1)
            vals[i] = float(np.trace(g).imag)
        except (FrameError, np.linalg.LinAlgError) as exc:
            msgs.append(f"y={y:g}: {exc}")
    return HerglotzResult(float(x), ys, vals, msgs, classify_herglotz(vals, zero, divergent))
