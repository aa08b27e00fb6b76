"""Command-line runner: ``hfl <command> [options]``.

Every run prints (or writes with --out) one JSON report: config echo, outcome,
result or failure diagnostics, library version and sha256 digests of the
inputs. Reports are byte-identical for identical arguments unless --timing is
given. Exit status: 0 ok, 2 construction failed, 3 bad input.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import max_level
from .dyadic import DyadicInterval, IntervalFamily, carleson_brute_force, carleson_constant, enumerate_dn
from .errors import ConstructionFailure, DomainError, HFLError, PreconditionError, ResourceLimitError
from .factorization import FactorizationCertificate, factor_identity
from .haar import HaarExpansion, StepFunction, dimension
from .netthin import net_thinning, random_subspace, verify_net_thinning
from .operators import generate
from .restricted import perturbed_identity, restricted_invertibility
from .selection import (ThinningParams, build_block_basis, random_admissible_pair,
                        select_sparse_level, verify_block_basis)

EXIT_OK, EXIT_FAILED, EXIT_BAD_INPUT = 0, 2, 3


class BadInput(HFLError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_BAD_INPUT, f"{self.prog}: error: {message}\n")


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False, default=_jsonable)


def _jsonable(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _finite(obj):
    """Replace non-finite floats by strings so reports stay strict JSON."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _check_levels(*levels):
    cap = max_level()
    for n in levels:
        if n is not None and not 0 <= n <= cap:
            raise BadInput(f"level {n} outside [0, MAX_LEVEL = {cap}]")


def _check_p(p):
    if not 1 < p < math.inf:
        raise BadInput(f"p must lie in (1, inf), got {p}")


def _operator(args, p):
    T = generate(args.op, args.N, seed=args.seed, p=p)
    return T, {"operator": T.digest()}


# -- commands --------------------------------------------------------------------

def cmd_block_basis(args):
    _check_p(args.p)
    _check_levels(args.m, args.N)
    if args.m > args.N:
        raise BadInput("need m <= N")
    T, digests = _operator(args, args.p)
    B = build_block_basis(T, args.m, args.p, safety=args.safety)
    check = verify_block_basis(B, T)
    if args.csv:
        _write_offdiagonal_csv(args.csv, check["offdiagonal"])
    return {"block_basis": B.to_json(), "verification": check,
            "stages": [r.to_json() for r in B.reports]}, digests


def _write_offdiagonal_csv(path, rows):
    fields = ["node", "index", "offdiag_sum", "chain_bound", "power_bound", "diagonal",
              "norm2_sq"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(row[k]) if isinstance(row[k], float) else row[k])
                             for k in fields})


def cmd_factor(args):
    _check_p(args.p)
    _check_levels(args.n, args.m, args.N)
    T, digests = _operator(args, args.p)
    cert = factor_identity(T, args.n, p=args.p, m=args.m, mode=args.mode,
                           threshold=args.threshold, strict=args.strict)
    data = cert.to_json(include_matrices=args.matrices)
    return {"certificate": data}, digests, cert.outcome


def cmd_thin(args):
    _check_p(args.p)
    I = DyadicInterval.parse(args.interval)
    _check_levels(I.level + args.depth + 1)
    params = ThinningParams(args.k, args.ell, args.p)
    digests = {}
    if args.x or args.y:
        if not (args.x and args.y):
            raise BadInput("give both --x and --y")
        texts = [Path(f).read_text() for f in (args.x, args.y)]
        x, y = (StepFunction.from_json(json.loads(t)) for t in texts)
        digests = {"x": sha256_text(texts[0]), "y": sha256_text(texts[1])}
    else:
        x, y = random_admissible_pair(I, args.depth, args.p, args.seed)
    res = select_sparse_level(x, y, I, params, depth=args.depth)
    return {"level": res.level, "bad": res.bad.literals(),
            "bad_measure": float(res.bad.measure()), "search_bound": res.search_bound,
            "A_p": params.A_p, "bad_counts": list(res.bad_counts)}, digests


def cmd_net_thin(args):
    _check_levels(args.N)
    if args.basis:
        text = Path(args.basis).read_text()
        data = json.loads(text)
        basis = [HaarExpansion.from_json(e).coefficients for e in data]
        if any(len(b) != dimension(args.N) for b in basis):
            raise BadInput("basis expansions must live on level N")
        digests = {"basis": sha256_text(text)}
    else:
        basis = random_subspace(args.N, args.n, args.seed)
        digests = {}
    res = net_thinning(basis, args.N, args.eps, n=args.n, net_size=args.net_size,
                       seed=args.seed, mode=args.mode)
    check = verify_net_thinning(res, basis, samples=args.samples, seed=args.seed + 1)
    return {"result": res.to_json(), "verification": check}, digests


def cmd_carleson(args):
    if args.family:
        name = args.family.lower()
        if not (name.startswith("d") and name[1:].isdigit()):
            raise BadInput(f"unknown family {args.family!r}; use dN")
        n = int(name[1:])
        _check_levels(n)
        family = enumerate_dn(n)
        digests = {}
    elif args.file:
        text = Path(args.file).read_text()
        family = IntervalFamily.from_literals(json.loads(text))
        digests = {"family": sha256_text(text)}
    elif args.literals:
        family = IntervalFamily.from_literals(s.strip() for s in args.literals.split(","))
        digests = {}
    else:
        raise BadInput("give --family, --file or --literals")
    value = carleson_constant(family)
    out = {"carleson": float(value), "exact": str(value), "members": len(family)}
    if args.check and len(family) <= 2000:
        out["brute_force"] = str(carleson_brute_force(family))
    return out, digests


def cmd_restricted_inv(args):
    _check_p(args.p)
    if args.N < 1:
        raise BadInput("N must be positive")
    op = args.op
    digests = {}
    if op == "identity":
        T = np.eye(args.N)
    elif op == "zero":
        T = np.zeros((args.N, args.N))
    elif op == "alternating":
        T = np.diag([1.0 - (i % 2) for i in range(args.N)])
    elif op.startswith("perturbed"):
        params = dict(part.split("=", 1) for part in op.split(":")[1:] if "=" in part)
        T = perturbed_identity(args.N, int(params.get("seed", args.seed)),
                               float(params.get("scale", 0.5)))
    elif op.startswith("file:"):
        path = op[5:]
        text = Path(path).read_text()
        T = np.asarray(json.loads(text), dtype=float)
        digests = {"matrix": sha256_text(text)}
    else:
        raise BadInput(f"unknown matrix spec {op!r}")
    digests.setdefault("matrix", hashlib.sha256(np.ascontiguousarray(T).tobytes()).hexdigest())
    res = restricted_invertibility(T, args.p, args.eps)
    return res.to_json(), digests


def cmd_selftest(args):
    from .selftest import run_selftest
    results = run_selftest(quick=args.quick)
    ok = all(r["passed"] for r in results)
    return {"suites": results, "all_passed": ok}, {}, "ok" if ok else "selftest-failed"


COMMANDS = {
    "block-basis": cmd_block_basis,
    "factor": cmd_factor,
    "thin": cmd_thin,
    "net-thin": cmd_net_thin,
    "carleson": cmd_carleson,
    "restricted-inv": cmd_restricted_inv,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hfl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"hfl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, *, operator=True):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", help="write the report here instead of stdout")
        sp.add_argument("--timing", action="store_true",
                        help="add wall-clock seconds (reports then differ run to run)")
        if operator:
            sp.add_argument("--op", default="identity",
                            help="identity | zero | multiplier:DIST[:seed=S] | "
                                 "random[:seed=S][:rank=R][:weight=W] | perm[:seed=S] | file:PATH")
            sp.add_argument("--N", type=int, default=10)
            sp.add_argument("--p", type=float, default=2.0)

    sp = sub.add_parser("block-basis", help="build and verify an operator-adapted block basis")
    common(sp)
    sp.add_argument("--m", type=int, default=2)
    sp.add_argument("--safety", type=float, default=0.5)
    sp.add_argument("--csv", help="export the off-diagonal table as CSV")

    sp = sub.add_parser("factor", help="factor the identity of L^p_n through T or Id - T")
    common(sp)
    sp.add_argument("--n", type=int, default=1)
    sp.add_argument("--m", type=int, default=None)
    sp.add_argument("--mode", choices=["best-effort", "conformant"], default="best-effort")
    sp.add_argument("--threshold", type=float, default=None)
    sp.add_argument("--strict", action="store_true",
                    help="treat a failed 1/2 contraction bound as a construction failure")
    sp.add_argument("--matrices", action="store_true", help="embed E and P in the report")

    sp = sub.add_parser("thin", help="sparse level below an interval for a pair (x, y)")
    common(sp, operator=False)
    sp.add_argument("--interval", default="0:1")
    sp.add_argument("--depth", type=int, default=12)
    sp.add_argument("--k", type=int, default=2)
    sp.add_argument("--ell", type=int, default=3)
    sp.add_argument("--p", type=float, default=2.0)
    sp.add_argument("--x", help="StepFunction JSON")
    sp.add_argument("--y", help="StepFunction JSON")

    sp = sub.add_parser("net-thin", help="thin D_N against a finite-dimensional subspace")
    common(sp, operator=False)
    sp.add_argument("--N", type=int, default=14)
    sp.add_argument("--n", type=int, default=2)
    sp.add_argument("--eps", type=float, default=0.5)
    sp.add_argument("--net-size", type=int, default=32)
    sp.add_argument("--samples", type=int, default=100)
    sp.add_argument("--mode", choices=["best-effort", "conformant"], default="best-effort")
    sp.add_argument("--basis", help="JSON list of Haar expansions {N, coeffs}")

    sp = sub.add_parser("carleson", help="Carleson constant of an interval family")
    common(sp, operator=False)
    sp.add_argument("--family", help="dN for all intervals of length >= 2^-N")
    sp.add_argument("--file", help="JSON list of literals \"n:k\"")
    sp.add_argument("--literals", help="comma-separated literals")
    sp.add_argument("--check", action="store_true", help="also run the brute-force oracle")

    sp = sub.add_parser("restricted-inv", help="restricted-invertibility factorization")
    common(sp, operator=False)
    sp.add_argument("--op", default="identity",
                    help="identity | zero | alternating | perturbed[:seed=S][:scale=X] | file:PATH")
    sp.add_argument("--N", type=int, default=16)
    sp.add_argument("--p", type=float, default=2.0)
    sp.add_argument("--eps", type=float, default=None)

    sp = sub.add_parser("selftest", help="run the built-in invariant suites")
    common(sp, operator=False)
    sp.add_argument("--quick", action="store_true")
    return parser


def _config_echo(args) -> dict:
    skip = {"out", "timing"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def run(argv=None) -> tuple[int, dict]:
    parser = build_parser()
    args = parser.parse_args(argv)
    config = _config_echo(args)
    report = {"command": args.command, "config": config, "version": __version__,
              "max_level": max_level()}
    start = time.perf_counter()
    try:
        out = COMMANDS[args.command](args)
        payload, digests = out[0], out[1]
        outcome = out[2] if len(out) > 2 else "ok"
        report.update(outcome=outcome, result=payload)
        code = EXIT_OK if outcome in ("ok", "non-conformant") else EXIT_FAILED
    except ConstructionFailure as exc:
        digests = {}
        partial = None
        if isinstance(exc.partial, FactorizationCertificate):
            partial = exc.partial.to_json(include_matrices=False)
        elif hasattr(exc.partial, "to_json"):
            partial = exc.partial.to_json()
        report.update(outcome=exc.outcome, error=str(exc),
                      diagnostics=exc.diagnostics, partial=partial)
        code = EXIT_FAILED
    except (BadInput, DomainError, PreconditionError, ResourceLimitError, OSError,
            json.JSONDecodeError, KeyError, ValueError) as exc:
        digests = {}
        report.update(outcome="bad-input", error=f"{type(exc).__name__}: {exc}")
        code = EXIT_BAD_INPUT
    digests["config"] = sha256_text(canonical_json(config))
    report["input_digests"] = digests
    if args.timing:
        report["wall_clock_seconds"] = time.perf_counter() - start
    report = _finite(report)
    text = canonical_json(report) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return code, report


def main(argv=None) -> int:
    code, _ = run(argv)
    return code


if __name__ == "__main__":
    sys.exit(main())
