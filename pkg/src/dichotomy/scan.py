"""Energy-axis scans: per-point indicators, conservative classification, exports."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import config as cfgmod
from .config import ScanConfig
from .dynamics import sample_base
from .finite_section import bulk_spectrum, periodic_monodromy_oracle, truncate
from .green import herglotz_indicator
from .hyperbolicity import bounded_orbit_search, growth_indicator, ug_certify
from .model import validate

CSV_COLUMNS = ("x", "lambda_estimate", "cert_verdict", "bounded_sup", "nearest_truncated_eig",
               "herglotz_limit", "classification")
CLASSES = ("resolvent", "spectrum", "undecided")


class ModelValidationError(ValueError):
    """The configured model fails symmetry or invertibility checks."""

    def __init__(self, report):
        super().__init__("; ".join(report.messages) or "model validation failed")
        self.report = report


@dataclass
class PointRecord:
    x: float
    imag: float = 0.0
    lambda_estimate: Optional[float] = None
    growth_slope: Optional[float] = None
    cert_verdict: Optional[str] = None
    cert_epsilon: Optional[float] = None
    cert_R: Optional[int] = None
    bounded_sup: Optional[float] = None
    nearest_truncated_eig: Optional[float] = None
    monodromy_in_spectrum: Optional[bool] = None
    herglotz_limit: Optional[float] = None
    herglotz_class: Optional[str] = None
    votes: dict = field(default_factory=dict)
    classification: str = "undecided"
    flags: list = field(default_factory=list)
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {k: _finite_or_none(v) for k, v in asdict(self).items()}


@dataclass
class ScanResult:
    config_hash: str
    records: list

    @property
    def failed(self) -> list:
        return [r for r in self.records if r.error is not None]

    def xs(self, classification: str) -> np.ndarray:
        return np.array([r.x for r in self.records if r.classification == classification])


def _finite_or_none(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def point_seed(cfg_hash: str, x: float) -> int:
    """Sampling seed for grid point x, fixed by the config hash."""
    digest = hashlib.sha256(f"{cfg_hash}:{x!r}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def classify(votes: dict) -> tuple:
    """Conservative vote: unanimity or 'undecided' with flags.

    ``votes`` maps method name to 'resolvent', 'spectrum' or None (no verdict).
    """
    flags = [f"{m}-inconclusive" for m, v in votes.items() if v is None]
    cast = {v for v in votes.values() if v is not None}
    if len(cast) > 1:
        res = sorted(m for m, v in votes.items() if v == "resolvent")
        spec = sorted(m for m, v in votes.items() if v == "spectrum")
        flags.append(f"disagree: resolvent[{','.join(res)}] vs spectrum[{','.join(spec)}]")
    if flags or not cast:
        return "undecided", flags
    return cast.pop(), []


# ---------------------------------------------------------------- per point


class _Context:
    """Everything a worker needs, rebuilt from the config inside each process."""

    def __init__(self, cfg: ScanConfig, eigs):
        self.cfg = cfg
        self.hash = cfgmod.config_hash(cfg)
        self.f = cfg.family()
        self.p = cfg.basepoint()
        self.samples = sample_base(self.f.base, cfg.resolutions.base)
        self.eigs = eigs


_CTX: Optional[_Context] = None


def _init_worker(cfg: ScanConfig, eigs) -> None:
    global _CTX
    _CTX = _Context(cfg, eigs)


def _evaluate(ctx: _Context, x: float) -> PointRecord:
    cfg = ctx.cfg
    m, r, t = cfg.methods, cfg.resolutions, cfg.thresholds
    z = complex(x, cfg.grid.imag) if cfg.grid.imag else float(x)
    rec = PointRecord(x=float(x), imag=float(cfg.grid.imag))
    votes = {}
    seed = point_seed(ctx.hash, x)
    if m.growth:
        g = growth_indicator(ctx.f, z, ctx.samples, r.growth_N)
        rec.lambda_estimate = g.lambda_estimate
        rec.growth_slope = g.min_slope
        votes["growth"] = "resolvent" if g.min_slope > t.growth_gap else "spectrum"
    if m.certify:
        c = ug_certify(ctx.f, z, t.certify_epsilon or None, None, r.base, r.sphere_samples,
                       seed=seed, refute_tol=t.refute_tol, samples=ctx.samples)
        if c.certified and c.R > t.certify_R:
            c.verdict = "inconclusive"
        rec.cert_verdict, rec.cert_epsilon, rec.cert_R = c.verdict, c.epsilon, c.R
        votes["certify"] = {"certified-UG": "resolvent", "refuted-UG": "spectrum"}.get(c.verdict)
    if m.bounded_orbit:
        b = bounded_orbit_search(ctx.f, z, r.base, r.sphere_samples, r.orbit_N, seed=seed, samples=ctx.samples)
        rec.bounded_sup = b.sup_norm
        votes["bounded_orbit"] = "spectrum" if b.sup_norm <= 1 + t.bounded_tol else "resolvent"
    if m.truncation:
        if len(ctx.eigs):
            i = int(np.argmin(np.abs(ctx.eigs - z)))
            rec.nearest_truncated_eig = float(ctx.eigs[i])
            near = abs(ctx.eigs[i] - z) <= t.truncation_radius
        else:
            near = False
        votes["truncation"] = "spectrum" if near else "resolvent"
    if m.monodromy:
        rec.monodromy_in_spectrum = periodic_monodromy_oracle(ctx.f, z)
        votes["monodromy"] = "spectrum" if rec.monodromy_in_spectrum else "resolvent"
    if m.herglotz:
        h = herglotz_indicator(ctx.f, ctx.p, float(x), t.herglotz_ladder, t.herglotz_zero, t.herglotz_divergent)
        rec.herglotz_limit = h.limit
        rec.herglotz_class = h.classification
        votes["herglotz"] = {"resolvent": "resolvent", "ac": "spectrum", "singular": "spectrum"}.get(h.classification)
        rec.flags.extend(h.messages)
    rec.votes = votes
    rec.classification, flags = classify(votes)
    rec.flags = flags + rec.flags
    return rec


def _run_point(x: float) -> PointRecord:
    try:
        return _evaluate(_CTX, x)
    except Exception as exc:  # recorded per point; the scan goes on
        return PointRecord(x=float(x), imag=float(_CTX.cfg.grid.imag), flags=["error"],
                           error=f"{type(exc).__name__}: {exc}")


def truncated_eigenvalues(cfg: ScanConfig) -> np.ndarray:
    """Bulk eigenvalues of the Dirichlet section, shared by every grid point."""
    if not cfg.methods.truncation:
        return np.empty(0)
    t = truncate(cfg.family(), cfg.basepoint(), cfg.resolutions.truncation_N)
    return bulk_spectrum(t, cfg.thresholds.bulk_weight)


def check_model(cfg: ScanConfig):
    f = cfg.family()
    report = validate(f, sample_base(f.base, max(cfg.resolutions.base, 32)))
    if not report.passed:
        raise ModelValidationError(report)
    return report


def scan(cfg: ScanConfig, workers: int = 1, xs=None) -> ScanResult:
    """Evaluate every enabled method on the grid and classify each point.

    Results are independent of ``workers``: each point's sampling seed comes
    from (config hash, x) and records are collected in grid order.
    """
    check_model(cfg)
    xs = cfg.grid_points() if xs is None else list(xs)
    eigs = truncated_eigenvalues(cfg)
    if workers <= 1 or len(xs) < 2:
        _init_worker(cfg, eigs)
        records = [_run_point(x) for x in xs]
    else:
        chunk = max(1, len(xs) // (4 * workers))
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(cfg, eigs)) as pool:
            records = list(pool.map(_run_point, xs, chunksize=chunk))
    return ScanResult(cfgmod.config_hash(cfg), records)


# ---------------------------------------------------------------- export


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return str(v)


def to_csv(res: ScanResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in res.records:
        d = asdict(r)
        w.writerow([_cell(d[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def to_json(res: ScanResult) -> str:
    doc = {"config_hash": res.config_hash, "records": [r.to_dict() for r in res.records]}
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n"


def export(res: ScanResult, fmt: str, path) -> None:
    if fmt not in cfgmod.FORMATS:
        raise ValueError(f"unknown export format {fmt!r}")
    text = to_csv(res) if fmt == "csv" else to_json(res)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def load_json(path) -> ScanResult:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return ScanResult(doc["config_hash"], [PointRecord(**r) for r in doc["records"]])
