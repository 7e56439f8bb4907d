"""Coefficient maps D, V and the dynamically defined Jacobi family H_omega."""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import BaseSystem, cycle, rotation

DEFAULT_INVERTIBILITY_THRESHOLD = 1e-8
SYMMETRY_TOL = 1e-12


class ModelError(ValueError):
    """A user model produced a non-finite or wrongly shaped coefficient."""


@dataclass(frozen=True, eq=False)
class MatrixField:
    """Map from base points to real l x l matrices.

    ``batch`` optionally evaluates a whole array of points at once (shape
    (k, dim) for torus systems, (k,) for cycles) and returns (k, l, l).
    """

    l: int
    func: Optional[Callable] = None
    description: str = ""
    batch: Optional[Callable] = None

    def __post_init__(self):
        if self.func is None and self.batch is None:
            raise ValueError("MatrixField needs func or batch")

    def many(self, points: np.ndarray) -> np.ndarray:
        if self.batch is not None:
            out = np.asarray(self.batch(points), dtype=float)
        else:
            out = np.asarray([np.asarray(self.func(_as_point(q)), dtype=float) for q in points])
        out = out.reshape(len(points), self.l, self.l)
        if not np.all(np.isfinite(out)):
            bad = int(np.argmax(~np.all(np.isfinite(out), axis=(1, 2))))
            raise ModelError(f"{self.description or 'field'} is not finite at {_as_point(points[bad])!r}")
        return out

    def __call__(self, point) -> np.ndarray:
        return self.many(np.asarray([point]))[0]


def _as_point(q):
    if np.ndim(q) == 0:
        return int(q)
    return tuple(float(c) for c in q)


def constant_field(M, description: str = "") -> MatrixField:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return MatrixField(M.shape[0], batch=lambda pts: np.broadcast_to(M, (len(pts),) + M.shape),
                       description=description or "constant")


@dataclass(frozen=True, eq=False)
class JacobiFamily:
    base: BaseSystem
    l: int
    D: MatrixField
    V: MatrixField
    invertibility_threshold: float = DEFAULT_INVERTIBILITY_THRESHOLD
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.D.l != self.l or self.V.l != self.l:
            raise ValueError("field dimensions do not match l")

    def __hash__(self):
        return id(self)


def eval_fields(f: JacobiFamily, p) -> tuple[np.ndarray, np.ndarray]:
    """(D(p), V(p)) at a single base point."""
    pts = f.base.as_array([p])
    return f.D.many(pts)[0], f.V.many(pts)[0]


@functools.lru_cache(maxsize=256)
def _orbit_fields_cached(f: JacobiFamily, p, start: int, stop: int):
    pts = f.base.orbit(p, np.arange(start, stop))
    D = f.D.many(pts).copy()
    V = f.V.many(pts).copy()
    D.setflags(write=False)
    V.setflags(write=False)
    return D, V


def orbit_fields(f: JacobiFamily, p, start: int, stop: int) -> tuple[np.ndarray, np.ndarray]:
    """D(T^k p), V(T^k p) for k in [start, stop); read-only arrays of shape (n, l, l)."""
    return _orbit_fields_cached(f, f.base.point(p), int(start), int(stop))


@dataclass
class ValidationReport:
    passed: bool
    samples: int
    v_symmetry_defect: float
    d_symmetry_defect: float
    min_d_singular_value: float
    worst_v_point: object = None
    worst_d_point: object = None
    messages: list = field(default_factory=list)


def validate(f: JacobiFamily, samples: Sequence) -> ValidationReport:
    """Check symmetry of V and D and invertibility of D over ``samples``.

    D symmetric is needed for H_omega to be self-adjoint with the coupling
    convention D(T^{n-1}w) u_{n-1} + D(T^n w) u_{n+1}.
    """
    if len(samples) == 0:
        raise ValueError("validate needs at least one sample point")
    pts = f.base.as_array(list(samples))
    D = f.D.many(pts)
    V = f.V.many(pts)
    vdef = np.max(np.abs(V - np.swapaxes(V, 1, 2)), axis=(1, 2))
    ddef = np.max(np.abs(D - np.swapaxes(D, 1, 2)), axis=(1, 2))
    smin = np.linalg.svd(D, compute_uv=False)[:, -1]
    iv, idd, isv = int(np.argmax(vdef)), int(np.argmax(ddef)), int(np.argmin(smin))
    msgs = []
    if vdef[iv] >= SYMMETRY_TOL:
        msgs.append(f"V not symmetric at {_as_point(pts[iv])!r}: defect {vdef[iv]:.3g}")
    if ddef[idd] >= SYMMETRY_TOL:
        msgs.append(f"D not symmetric at {_as_point(pts[idd])!r}: defect {ddef[idd]:.3g}")
    if smin[isv] <= f.invertibility_threshold:
        msgs.append(f"D nearly singular at {_as_point(pts[isv])!r}: smallest singular value {smin[isv]:.3g}")
    worst_d = idd if ddef[idd] >= SYMMETRY_TOL and smin[isv] > f.invertibility_threshold else isv
    return ValidationReport(
        passed=not msgs,
        samples=len(pts),
        v_symmetry_defect=float(vdef[iv]),
        d_symmetry_defect=float(ddef[idd]),
        min_d_singular_value=float(smin[isv]),
        worst_v_point=_as_point(pts[iv]),
        worst_d_point=_as_point(pts[worst_d]),
        messages=msgs,
    )


# ---------------------------------------------------------------- presets


def free(base: Optional[BaseSystem] = None, l: int = 1) -> JacobiFamily:
    base = base or rotation()
    return JacobiFamily(base, l, constant_field(np.eye(l), "D=I"), constant_field(np.zeros((l, l)), "V=0"),
                        name="free", params={"l": l})


def constant_block(V0, D0=None, base: Optional[BaseSystem] = None) -> JacobiFamily:
    V0 = np.atleast_2d(np.asarray(V0, dtype=float))
    l = V0.shape[0]
    D0 = np.eye(l) if D0 is None else np.atleast_2d(np.asarray(D0, dtype=float))
    params = {"V0": V0.tolist(), "D0": D0.tolist()}
    return JacobiFamily(base or rotation(), l, constant_field(D0, "D=D0"), constant_field(V0, "V=V0"),
                        name="constant_block", params=params)


def cosine(amplitude: float = 2.0, phase: float = 0.0, base: Optional[BaseSystem] = None) -> JacobiFamily:
    """Scalar V(x) = amplitude * cos(2 pi (x_1 + phase)), D = 1."""
    base = base or rotation()
    if base.is_cycle:
        raise ValueError("cosine potential needs a torus base")

    def vbatch(pts):
        x = np.asarray(pts, dtype=float)[:, 0]
        return (amplitude * np.cos(2 * np.pi * (x + phase)))[:, None, None]

    return JacobiFamily(base, 1, constant_field(np.eye(1), "D=1"),
                        MatrixField(1, batch=vbatch, description=f"{amplitude} cos(2pi x)"),
                        name="cosine", params={"amplitude": amplitude, "phase": phase})


def matrix_trig(a, b, base: Optional[BaseSystem] = None) -> JacobiFamily:
    """V(x)_ij = a_ij cos(2 pi x_1) + b_ij with D = I."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape != b.shape:
        raise ValueError("a and b must have the same shape")
    base = base or rotation()
    if base.is_cycle:
        raise ValueError("matrix trigonometric potential needs a torus base")
    l = a.shape[0]

    def vbatch(pts):
        c = np.cos(2 * np.pi * np.asarray(pts, dtype=float)[:, 0])
        return c[:, None, None] * a[None] + b[None]

    return JacobiFamily(base, l, constant_field(np.eye(l), "D=I"),
                        MatrixField(l, batch=vbatch, description="a cos(2pi x) + b"),
                        name="matrix_trig", params={"a": a.tolist(), "b": b.tolist()})


def periodic(D_table, V_table) -> JacobiFamily:
    """Periodic coefficients (D_k, V_k), k = 0..p-1, over a p-cycle."""
    Dt = np.asarray(D_table, dtype=float)
    Vt = np.asarray(V_table, dtype=float)
    if Dt.ndim == 1:
        Dt = Dt[:, None, None]
    if Vt.ndim == 1:
        Vt = Vt[:, None, None]
    if Dt.shape != Vt.shape or Dt.ndim != 3 or Dt.shape[1] != Dt.shape[2]:
        raise ValueError("periodic tables must both have shape (p, l, l)")
    p, l = Dt.shape[0], Dt.shape[1]
    return JacobiFamily(cycle(p), l,
                        MatrixField(l, batch=lambda s: Dt[np.asarray(s, dtype=np.int64)], description="D table"),
                        MatrixField(l, batch=lambda s: Vt[np.asarray(s, dtype=np.int64)], description="V table"),
                        name="periodic", params={"D": Dt.tolist(), "V": Vt.tolist()})
