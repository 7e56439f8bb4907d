"""Command line entry point: scan, certify, green, spectrum, weyl."""
from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import config as cfgmod
from .config import ConfigError
from .finite_section import truncate, truncated_spectrum, weyl_residual
from .green import (FrameError, SingularTruncationError, build_decaying_frames, green_table,
                    verify_green_identities, wronskian_Q)
from .hyperbolicity import analyze, bounded_orbit_search
from .model import ModelError
from .scan import ModelValidationError, check_model, export, scan

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION, EXIT_PARTIAL = 0, 1, 2, 3


def _complex(text: str) -> complex:
    try:
        return complex(text.replace(" ", ""))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dichotomy", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("scan", help="classify every grid point")
    s.add_argument("config")
    s.add_argument("--output", help="override output.path")
    s.add_argument("--format", choices=cfgmod.FORMATS, help="override output.format")
    s.add_argument("--min", type=float, help="override grid.min")
    s.add_argument("--max", type=float, help="override grid.max")
    s.add_argument("--step", type=float, help="override grid.step")
    s.add_argument("--imag", type=float, help="override grid.imag")
    s.add_argument("--workers", type=int, default=1)

    c = sub.add_parser("certify", help="finite growth certificate at one z")
    c.add_argument("config")
    c.add_argument("--z", type=_complex, required=True)
    c.add_argument("--epsilon", type=float)
    c.add_argument("--R", type=int)

    g = sub.add_parser("green", help="Green table and identity residuals at one z")
    g.add_argument("config")
    g.add_argument("--z", type=_complex, required=True)
    g.add_argument("--window", type=int, default=5, help="table covers [-window, window]")
    g.add_argument("--N", type=int, default=60, help="frame half-width")

    t = sub.add_parser("spectrum", help="eigenvalues of the Dirichlet section on [-N, N]")
    t.add_argument("config")
    t.add_argument("--N", type=int, required=True)

    w = sub.add_parser("weyl", help="Weyl residual curve at one z")
    w.add_argument("config")
    w.add_argument("--z", type=_complex, required=True)
    w.add_argument("--L", type=int, nargs="+", required=True)
    w.add_argument("--seed", type=float, nargs="+",
                   help="cocycle vector (u_1, D u_0); default: most bounded direction at T of the base point")
    return ap


def _z(z: complex):
    return z.real if z.imag == 0 else z


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=1)
    sys.stdout.write("\n")


def _cmd_scan(cfg, args) -> int:
    cfg = cfgmod.override(cfg, "grid", min=args.min, max=args.max, step=args.step, imag=args.imag)
    cfg = cfgmod.override(cfg, "output", path=args.output, format=args.format)
    res = scan(cfg, workers=args.workers)
    export(res, cfg.output.format, cfg.output.path)
    counts = {k: sum(r.classification == k for r in res.records) for k in ("resolvent", "spectrum", "undecided")}
    print(f"{len(res.records)} points -> {cfg.output.path}: " + ", ".join(f"{k} {v}" for k, v in counts.items()))
    for r in res.failed:
        print(f"x={r.x}: {r.error}", file=sys.stderr)
    return EXIT_PARTIAL if res.failed else EXIT_OK


def _cmd_certify(cfg, args) -> int:
    f = cfg.family()
    r = cfg.resolutions
    rep = analyze(f, _z(args.z), r.base, r.sphere_samples, r.growth_N, args.epsilon, args.R)
    _emit(rep.to_dict())
    return EXIT_OK


def _cmd_green(cfg, args) -> int:
    f, p, z = cfg.family(), cfg.basepoint(), _z(args.z)
    N = max(args.N, args.window + 1)
    plus, minus = build_decaying_frames(f, z, p, N)
    Q = wronskian_Q(f, plus, minus)
    table = green_table(plus, minus, -args.window, args.window)
    res = [verify_green_identities(f, plus, minus, n) for n in range(-args.window, args.window)]
    out = table.to_dict()
    out["Q"] = np.stack([Q.real, Q.imag], axis=-1).tolist()
    out["identity_residuals"] = {"n": list(range(-args.window, args.window)),
                                 "a": [x[0] for x in res], "b": [x[1] for x in res], "c": [x[2] for x in res]}
    _emit(out)
    return EXIT_OK


def _cmd_spectrum(cfg, args) -> int:
    p = cfg.basepoint()
    ev = truncated_spectrum(truncate(cfg.family(), p, args.N))
    omega = str(p) if isinstance(p, int) else " ".join(repr(c) for c in p)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["eigenvalue", "N", "omega", "model_hash"])
    mhash = cfgmod.model_hash(cfg)
    for e in ev:
        w.writerow([repr(float(e)), args.N, omega, mhash])
    return EXIT_OK


def _cmd_weyl(cfg, args) -> int:
    f, p, z = cfg.family(), cfg.basepoint(), _z(args.z)
    if args.seed:
        seed = np.asarray(args.seed)
        if seed.shape != (2 * f.l,):
            print(f"--seed needs {2 * f.l} numbers", file=sys.stderr)
            return EXIT_CONFIG
    else:
        # (u_1, D u_0) evolves under A_n at T p
        seed = bounded_orbit_search(f, z, sphere_samples=cfg.resolutions.sphere_samples,
                                    N=cfg.resolutions.orbit_N, samples=[f.base.advance(p, 1)]).vector
    curve = [{"L": L, "residual": weyl_residual(f, p, z, L, seed)} for L in args.L]
    _emit({"z": [z.real, z.imag] if isinstance(z, complex) else [z, 0.0], "curve": curve})
    return EXIT_OK


COMMANDS = {"scan": _cmd_scan, "certify": _cmd_certify, "green": _cmd_green,
            "spectrum": _cmd_spectrum, "weyl": _cmd_weyl}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = cfgmod.load_config(args.config)
        check_model(cfg)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ModelValidationError, ModelError) as exc:
        print(f"model validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FrameError, SingularTruncationError, ValueError) as exc:
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
