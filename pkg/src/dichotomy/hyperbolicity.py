"""Uniform growth and uniform hyperbolicity diagnostics for A_z.

The finite certificate checks that every sampled (omega, v) reaches
norm 1 + eps under some A_r with |r| <= R.  It is a sampled check in floating
point, not a proof; the worst candidates are polished with a local optimizer
before a certificate is issued, and the report records the sampling densities.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, stats
from scipy.linalg import subspace_angles
from scipy.stats import qmc

from .cocycle import chain_many, cocycle_batch, work_dtype
from .dynamics import sample_base
from .model import JacobiFamily, orbit_fields

EPSILON_LADDER = (0.5, 0.25, 0.1)
R_LADDER = (1, 2, 4, 8, 16, 32, 64)
NOTE = ("sampled floating-point check over a finite base grid and a finite set of "
        "unit directions; not a rigorous proof")
HUGE = 1e150


class SplittingError(RuntimeError):
    """No usable l/l singular-value gap at the requested point."""

    def __init__(self, message, gap):
        super().__init__(message)
        self.gap = gap


# ------------------------------------------------------------------ growth


@dataclass
class GrowthReport:
    N: int
    lambda_estimate: float
    beta_estimate: float
    slopes: np.ndarray
    fit_slopes: np.ndarray

    @property
    def min_slope(self) -> float:
        return float(np.min(self.slopes))

    @property
    def max_slope(self) -> float:
        return float(np.max(self.slopes))


def growth_indicator(f: JacobiFamily, z, samples: Sequence, N: int = 256) -> GrowthReport:
    """Per-sample l/l+1 log singular-value gap of A_N divided by 2N.

    ``lambda_estimate`` is exp of the smallest slope over samples;
    ``beta_estimate`` is the largest beta with s_l(A_k) >= beta lambda^k at
    every recorded checkpoint k and sample.
    """
    if N < 32:
        raise ValueError("N must be >= 32")
    if len(samples) == 0:
        raise ValueError("samples must be nonempty")
    l = f.l
    cps = sorted(set(np.linspace(N / 8, N, 8).astype(int).tolist()))
    ls, *_ = chain_many(f, z, samples, N, "forward", checkpoints=cps)
    gaps = ls[:, :, l - 1] - ls[:, :, l]
    slopes = gaps[:, -1] / (2.0 * N)
    log_lam = float(np.min(slopes))
    k = np.asarray(cps, dtype=float)
    log_beta = float(np.min(ls[:, :, l - 1] - k[None, :] * log_lam))
    half = k >= N / 2
    if half.sum() >= 2:
        X = np.vstack([k[half], np.ones(half.sum())]).T
        coef, *_ = np.linalg.lstsq(X, gaps[:, half].T / 2.0, rcond=None)
        fit = coef[0]
    else:
        fit = slopes.copy()
    return GrowthReport(int(N), float(np.exp(log_lam)), float(np.exp(log_beta)), slopes, np.asarray(fit))


# ---------------------------------------------------------- orbit profiles


def sphere_directions(m: int, count: int, seed: int = 0) -> np.ndarray:
    """Deterministic low-discrepancy unit vectors in C^m."""
    h = qmc.Halton(d=2 * m, scramble=True, seed=seed).random(count)
    g = stats.norm.ppf(np.clip(h, 1e-12, 1 - 1e-12))
    v = g[:, :m] + 1j * g[:, m:]
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _transfer_stack(f: JacobiFamily, z, p, R: int) -> np.ndarray:
    """A_r(p) for r = -R..R stacked along axis 0 (index r + R).

    Products whose norm passes HUGE are cut off; those slots are NaN.
    """
    m = 2 * f.l
    fwd = cocycle_batch(f, z, p, 0, R)
    bwd = cocycle_batch(f, z, p, -R, 0, inverse=True)
    out = np.full((2 * R + 1, m, m), np.nan, dtype=complex)
    eye = np.eye(m, dtype=fwd.dtype)
    out[R] = eye
    P = eye
    for r in range(1, R + 1):
        P = fwd[r - 1] @ P
        if not np.max(np.abs(P)) < HUGE:
            break
        out[R + r] = P
    P = eye
    for r in range(1, R + 1):
        P = bwd[R - r] @ P
        if not np.max(np.abs(P)) < HUGE:
            break
        out[R - r] = P
    return out


def _eigen_seeds(stack: np.ndarray, R: int, period: int = 0) -> np.ndarray:
    """Eigenvectors of A_r with modulus closest to 1, for a few large r."""
    rs = {r for r in (R, R - 1, R - 2, R - 3) if r >= 1}
    if period:
        rs |= {period * k for k in (1, R // period) if 1 <= period * k <= R}
    seeds = []
    for r in sorted(rs):
        for M in (stack[R + r], stack[R - r]):
            if not np.all(np.isfinite(M)):
                continue
            mu, vecs = np.linalg.eig(M)
            i = int(np.argmin(np.abs(np.log(np.abs(mu) + 1e-300))))
            v = vecs[:, i]
            seeds.append(v / np.linalg.norm(v))
    m = stack.shape[1]
    return np.asarray(seeds, dtype=complex).reshape(-1, m)


def _norms(stack: np.ndarray, V: np.ndarray) -> np.ndarray:
    """|A_r v| for every vector (rows of V) and every r; NaN slots become 0."""
    with np.errstate(invalid="ignore", over="ignore"):
        W = np.einsum("rij,kj->kri", stack, V)
        n = np.linalg.norm(W, axis=2)
    return np.nan_to_num(n, nan=0.0, posinf=HUGE)


def _window_max(norms: np.ndarray, R: int, Rw: int) -> np.ndarray:
    return norms[..., R - Rw: R + Rw + 1].max(axis=-1)


def _refine(stack: np.ndarray, R: int, Rw: int, v0: np.ndarray, power: float = 20.0):
    """Locally minimize max_{|r|<=Rw} |A_r v| / |v| starting from v0.

    Uses L-BFGS-B on a log-sum-exp smoothing of log |A_r v|^2.
    """
    T = stack[R - Rw: R + Rw + 1]
    T = T[np.all(np.isfinite(T), axis=(1, 2))]
    B = np.einsum("rki,rkj->rij", T.conj(), T)
    Br = np.block([[B.real, -B.imag], [B.imag, B.real]])
    m = B.shape[1]

    def fun(x):
        q = np.einsum("rij,j->ri", Br, x)
        num = np.maximum(q @ x, 1e-300)
        nx = x @ x
        lphi = np.log(num) - np.log(nx)
        a = power * lphi
        amax = a.max()
        w = np.exp(a - amax)
        val = (amax + np.log(w.sum())) / power
        w /= w.sum()
        grad = (2.0 * (w / num) @ q) - 2.0 * x / nx
        return val, grad

    x0 = np.concatenate([v0.real, v0.imag])
    res = optimize.minimize(fun, x0, jac=True, method="L-BFGS-B", options={"maxiter": 200})
    v = res.x[:m] + 1j * res.x[m:]
    v = v / np.linalg.norm(v)
    return v, float(_window_max(_norms(stack, v[None]), R, Rw)[0])


@dataclass
class _ProfileSet:
    R: int
    reps: list
    owners: list
    stacks: list
    vectors: list
    norms: list

    def worst(self, Rw: int, count: int = 1):
        """The ``count`` smallest (value, rep index, vector index) at window Rw."""
        cand = []
        for s, nm in enumerate(self.norms):
            w = _window_max(nm, self.R, Rw)
            idx = np.argsort(w)[:count]
            cand.extend((float(w[i]), s, int(i)) for i in idx)
        cand.sort()
        return cand[:count]

    def refined_worst(self, Rw: int, count: int = 4):
        best = None
        seen = set()
        for val, s, i in self.worst(Rw, count):
            if (s, i) in seen:
                continue
            seen.add((s, i))
            v0 = self.vectors[s][i]
            cand = (val, s, v0)
            if val < HUGE:
                v, rval = _refine(self.stacks[s], self.R, Rw, v0)
                if rval < val:
                    cand = (rval, s, v)
            if best is None or cand[0] < best[0]:
                best = cand
        return best


def _profiles(f: JacobiFamily, z, samples: Sequence, R: int, directions: np.ndarray) -> _ProfileSet:
    reps, owners, keys = [], [], {}
    for q in samples:
        D, V = orbit_fields(f, q, -R, R)
        key = D.tobytes() + V.tobytes()
        if key not in keys:
            keys[key] = len(reps)
            reps.append(q)
        owners.append(keys[key])
    period = f.base.period if f.base.is_cycle else 0
    stacks, vectors, norms = [], [], []
    for q in reps:
        st = _transfer_stack(f, z, q, R)
        vecs = np.vstack([directions, _eigen_seeds(st, R, period)])
        stacks.append(st)
        vectors.append(vecs)
        norms.append(_norms(st, vecs))
    return _ProfileSet(R, reps, owners, stacks, vectors, norms)


# ------------------------------------------------------------ certification


@dataclass
class Certificate:
    z: complex
    certified: bool
    verdict: str
    epsilon: Optional[float]
    R: Optional[int]
    worst_point: object
    worst_vector: np.ndarray
    worst_norm: float
    worst_window: int
    base_resolution: int
    base_points: int
    distinct_orbits: int
    sphere_samples: int
    tested: list = field(default_factory=list)
    refined: bool = True
    note: str = NOTE

    def to_dict(self) -> dict:
        return {
            "z": [float(np.real(self.z)), float(np.imag(self.z))],
            "verdict": self.verdict,
            "certified": self.certified,
            "epsilon": self.epsilon,
            "R": self.R,
            "counterexample": None if self.certified else {
                "point": _jsonable_point(self.worst_point),
                "vector": [[float(c.real), float(c.imag)] for c in self.worst_vector],
                "sup_norm": self.worst_norm,
                "window": self.worst_window,
            },
            "grids": {
                "base_resolution": self.base_resolution,
                "base_points": self.base_points,
                "distinct_orbits": self.distinct_orbits,
                "sphere_samples": self.sphere_samples,
                "refined": self.refined,
            },
            "tested": [{"epsilon": e, "R": r, "min_norm": v} for e, r, v in self.tested],
            "note": self.note,
        }


def _jsonable_point(p):
    return p if isinstance(p, int) else list(p)


def default_sphere_samples(l: int) -> int:
    return 512 * l * l


def ug_certify(f: JacobiFamily, z, epsilon: Optional[float] = None, R: Optional[int] = None,
               base_resolution: int = 64, sphere_samples: Optional[int] = None, refine: bool = True,
               seed: int = 0, refute_tol: float = 0.05, samples: Optional[Sequence] = None) -> Certificate:
    """Sampled finite growth certificate at z.

    With ``epsilon`` and ``R`` given, only that pair is tested.  With neither,
    the ladder eps = 0.5 with R = 1, 2, 4, ..., 64 is tried first, then
    eps = 0.25 and eps = 0.1.  Fixing only ``epsilon`` walks R = 1, 2, ..., 64
    at that epsilon; fixing only ``R`` walks the epsilon ladder at that window.
    A certificate is issued for the first pair whose worst sampled norm, after
    local refinement, is at least 1 + eps.

    When no pair certifies, the worst (omega, v) over the largest window is
    returned; the verdict is ``refuted-UG`` if its sup norm is at most
    1 + refute_tol and ``inconclusive`` otherwise.
    """
    if epsilon is not None and not epsilon > 0:
        raise ValueError("need epsilon > 0")
    if R is not None and R < 1:
        raise ValueError("need R >= 1")
    eps_list = EPSILON_LADDER if epsilon is None else (float(epsilon),)
    r_list = R_LADDER if R is None else (int(R),)
    pairs = [(e, r) for e in eps_list for r in r_list]
    m = 2 * f.l
    K = default_sphere_samples(f.l) if sphere_samples is None else int(sphere_samples)
    samples = list(samples) if samples is not None else sample_base(f.base, base_resolution)
    Rmax = max(max(r for _, r in pairs), 1)
    prof = _profiles(f, z, samples, Rmax, sphere_directions(m, K, seed))

    tested = []
    hit = None
    for eps, r in pairs:
        val = prof.worst(r, 1)[0][0]
        if val >= 1 + eps and refine:
            val = min(val, prof.refined_worst(r)[0])
        tested.append((eps, r, val))
        if val >= 1 + eps:
            hit = (eps, r)
            break

    window = hit[1] if hit else Rmax
    if refine:
        wval, ws, wv = prof.refined_worst(window)
    else:
        wval, ws, i = prof.worst(window, 1)[0]
        wv = prof.vectors[ws][i]
    if hit is not None:
        verdict = "certified-UG"
    elif wval <= 1 + refute_tol:
        verdict = "refuted-UG"
    else:
        verdict = "inconclusive"
    return Certificate(
        z=complex(z), certified=hit is not None, verdict=verdict,
        epsilon=hit[0] if hit else None, R=hit[1] if hit else None,
        worst_point=prof.reps[ws], worst_vector=wv, worst_norm=float(wval), worst_window=window,
        base_resolution=int(base_resolution), base_points=len(samples), distinct_orbits=len(prof.reps),
        sphere_samples=K, tested=tested, refined=refine,
    )


@dataclass
class BoundedOrbit:
    point: object
    vector: np.ndarray
    sup_norm: float
    profile: np.ndarray
    N: int


def bounded_orbit_search(f: JacobiFamily, z, base_resolution: int = 64, sphere_samples: Optional[int] = None,
                         N: int = 64, seed: int = 0, refine: bool = True,
                         samples: Optional[Sequence] = None) -> BoundedOrbit:
    """Minimize max_{|n| <= N} |A_n(omega) v| over sampled (omega, unit v).

    ``profile`` holds |A_n(omega) v| for n = -N..N at the minimizer.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    m = 2 * f.l
    K = default_sphere_samples(f.l) if sphere_samples is None else int(sphere_samples)
    samples = list(samples) if samples is not None else sample_base(f.base, base_resolution)
    prof = _profiles(f, z, samples, int(N), sphere_directions(m, K, seed))
    if refine:
        val, s, v = prof.refined_worst(N)
    else:
        val, s, i = prof.worst(N, 1)[0]
        v = prof.vectors[s][i]
    profile = _norms(prof.stacks[s], v[None])[0]
    return BoundedOrbit(prof.reps[s], v, float(val), profile, int(N))


# ---------------------------------------------------------------- splitting


@dataclass
class SubspaceFrame:
    basepoint: object
    columns: np.ndarray
    flavor: str

    def orthonormality_defect(self) -> float:
        c = self.columns
        return float(np.max(np.abs(c.conj().T @ c - np.eye(c.shape[1]))))


def _generic_frame(m: int, l: int, dtype) -> np.ndarray:
    rng = np.random.default_rng(20240611)
    X = rng.standard_normal((m, l))
    if dtype is complex:
        X = X + 1j * rng.standard_normal((m, l))
    return np.linalg.qr(X)[0]


def _check_gap(f: JacobiFamily, z, p, N: int) -> float:
    ls, *_ = chain_many(f, z, [p], N, "forward")
    l = f.l
    gap = float(ls[0, -1, l - 1] - ls[0, -1, l])
    if not gap >= 1e-3 * N:
        raise SplittingError(f"singular-value gap {gap:.3g} at the l/l+1 split is below {1e-3 * N:.3g}", gap)
    return gap


def splitting_orbit(f: JacobiFamily, z, p, N: int = 64, steps: int = 0) -> list:
    """Stable/unstable frames at T^k p for k = 0..steps.

    The stable frame is obtained by pulling a generic l-frame back from
    T^{N+steps} p with inverse cocycle matrices and re-orthonormalizing each
    step; the unstable frame by pushing forward from T^{-N} p.  Both converge
    to the singular subspaces of A_N and A_{-N} for the l smallest singular
    values.
    """
    N, steps = int(N), int(steps)
    _check_gap(f, z, p, N)
    l, m = f.l, 2 * f.l
    dtype = work_dtype(z)
    base = f.base
    X = _generic_frame(m, l, dtype)
    inv = cocycle_batch(f, z, p, 0, N + steps, inverse=True)
    stable = [None] * (steps + 1)
    for k in range(N + steps - 1, -1, -1):
        X = np.linalg.qr(inv[k] @ X)[0]
        if k <= steps:
            stable[k] = SubspaceFrame(base.advance(p, k), X, "stable")
    X = _generic_frame(m, l, dtype)
    fwd = cocycle_batch(f, z, p, -N, steps)
    unstable = [None] * (steps + 1)
    for k in range(-N, steps):
        X = np.linalg.qr(fwd[k + N] @ X)[0]
        if k + 1 >= 0:
            unstable[k + 1] = SubspaceFrame(base.advance(p, k + 1), X, "unstable")
    return list(zip(stable, unstable))


def splitting(f: JacobiFamily, z, p, N: int = 64):
    """(stable, unstable) SubspaceFrame pair at p."""
    return splitting_orbit(f, z, p, N, 0)[0]


def subspace_distance(A: np.ndarray, B: np.ndarray) -> float:
    """Sine of the largest principal angle between the column spans."""
    return float(np.sin(np.max(subspace_angles(A, B))))


@dataclass
class InvarianceCheck:
    status: str
    defect: Optional[float]
    detail: str = ""


def check_invariance(f: JacobiFamily, z, p, frames: Optional[list] = None, steps: int = 10,
                     N: int = 64) -> InvarianceCheck:
    """Max principal-angle defect between A(T^k p) s(T^k p) and s(T^{k+1} p), same for u."""
    if frames is None:
        try:
            frames = splitting_orbit(f, z, p, N, steps)
        except SplittingError as exc:
            return InvarianceCheck("inconclusive", None, str(exc))
    steps = min(steps, len(frames) - 1)
    A = cocycle_batch(f, z, p, 0, steps)
    worst = 0.0
    for k in range(steps):
        for j in range(2):
            moved = A[k] @ frames[k][j].columns
            worst = max(worst, subspace_distance(moved, frames[k + 1][j].columns))
    return InvarianceCheck("ok", worst)


def angle_gap(frames: Sequence) -> float:
    """Smallest principal angle between stable and unstable spans over all pairs."""
    if len(frames) == 0:
        raise ValueError("need at least one frame pair")
    out = np.pi / 2
    for s, u in frames:
        S = s.columns if isinstance(s, SubspaceFrame) else np.asarray(s)
        U = u.columns if isinstance(u, SubspaceFrame) else np.asarray(u)
        out = min(out, float(np.min(subspace_angles(S, U))))
    return out


def joint_rank(stable: SubspaceFrame, unstable: SubspaceFrame) -> int:
    return int(np.linalg.matrix_rank(np.hstack([stable.columns, unstable.columns])))


# ------------------------------------------------------------------ report


@dataclass
class HyperbolicityReport:
    z: complex
    verdict: str
    epsilon: Optional[float]
    R: Optional[int]
    lambda_estimate: float
    beta_estimate: float
    counterexample: Optional[tuple]
    splitting: Optional[list]
    min_angle_gap: Optional[float]
    certificate: Certificate
    growth: GrowthReport

    def to_dict(self) -> dict:
        d = self.certificate.to_dict()
        d.update({
            "lambda_estimate": self.lambda_estimate,
            "beta_estimate": self.beta_estimate,
            "gamma": self.min_angle_gap,
        })
        return d


def analyze(f: JacobiFamily, z, base_resolution: int = 64, sphere_samples: Optional[int] = None,
            N: int = 256, epsilon: Optional[float] = None, R: Optional[int] = None, seed: int = 0,
            splitting_N: int = 64, splitting_steps: int = 8) -> HyperbolicityReport:
    """Growth estimate, finite certificate and, when certified, the splitting along an orbit."""
    samples = sample_base(f.base, base_resolution)
    growth = growth_indicator(f, z, samples, N)
    cert = ug_certify(f, z, epsilon, R, base_resolution, sphere_samples, seed=seed, samples=samples)
    frames, gamma = None, None
    if cert.certified:
        try:
            frames = splitting_orbit(f, z, samples[0], splitting_N, splitting_steps)
            gamma = angle_gap(frames)
        except SplittingError:
            frames = None
    counter = None if cert.certified else (cert.worst_point, cert.worst_vector, cert.worst_norm)
    return HyperbolicityReport(complex(z), cert.verdict, cert.epsilon, cert.R, growth.lambda_estimate,
                               growth.beta_estimate, counter, frames, gamma, cert, growth)
