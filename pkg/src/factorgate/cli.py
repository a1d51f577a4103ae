"""Command-line front end: ``factor-gate <command> [options]``.

Exit codes: 0 member, 1 non-member, 2 indeterminate, 64 usage error,
65 bad input data, 74 I/O failure.
"""

from __future__ import annotations

import argparse
import io
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .certificates import FactorRep, Status, Verdict
from .construct import ConstructionError, GlueError, build_by_induction, glue
from .decide import DEFAULT_RESTARTS, decide, rank_obstruction
from .finiteness import decide_by_submatrices, equivalence_sweep
from .matcore import DEFAULT_TOL, NotPositiveDefiniteError, Tolerances
from .oracle import fit
from .witness import (
    GenerationError,
    GenSpec,
    Generic,
    RankOneSubset,
    TwoBlock,
    ZeroRows,
    deleted_submatrix_certificate,
    random_member,
    tightness_example,
)

EXIT_MEMBER, EXIT_NON_MEMBER, EXIT_INDETERMINATE = 0, 1, 2
EXIT_USAGE, EXIT_DATA, EXIT_IO = 64, 65, 74
ASYMMETRY_LIMIT = 1e-12

_STATUS_EXIT = {
    Status.MEMBER: EXIT_MEMBER,
    Status.NON_MEMBER: EXIT_NON_MEMBER,
    Status.INDETERMINATE: EXIT_INDETERMINATE,
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(EXIT_USAGE, message)


# -- matrix I/O ----------------------------------------------------------


def _read_text(path: str) -> str:
    try:
        if path == "-":
            return sys.stdin.read()
        return Path(path).read_text()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc.strerror or exc}")


def parse_matrix(text: str) -> np.ndarray:
    """Parse CSV rows or a JSON object ``{"p": n, "rows": [...]}``."""
    stripped = text.lstrip()
    try:
        if stripped.startswith("{"):
            data = json.loads(text)
            rows = data["rows"]
            sigma = np.array(rows, dtype=float)
            if "p" in data and int(data["p"]) != sigma.shape[0]:
                raise ValueError(f"declared p={data['p']} but found {sigma.shape[0]} rows")
        else:
            sigma = np.loadtxt(io.StringIO(text), delimiter=",", dtype=float, ndmin=2)
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(EXIT_DATA, f"cannot parse matrix: {exc}")
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1] or sigma.shape[0] == 0:
        raise CliError(EXIT_DATA, f"matrix must be square, got shape {sigma.shape}")
    if not np.all(np.isfinite(sigma)):
        raise CliError(EXIT_DATA, "matrix has non-finite entries")
    asym = float(np.max(np.abs(sigma - sigma.T)))
    if asym > ASYMMETRY_LIMIT:
        raise CliError(EXIT_DATA, f"matrix is not symmetric (max asymmetry {asym:.3g})")
    return (sigma + sigma.T) / 2


def load_matrix(path: str) -> np.ndarray:
    return parse_matrix(_read_text(path))


def matrix_to_csv(sigma: np.ndarray) -> str:
    return "".join(",".join("%.17g" % x for x in row) + "\n" for row in sigma)


def matrix_to_json(sigma: np.ndarray) -> dict:
    return {"p": int(sigma.shape[0]), "rows": sigma.tolist()}


def _load_rep(path: str) -> FactorRep:
    try:
        data = json.loads(_read_text(path))
        if "certificate" in data:
            data = data["certificate"]
        return FactorRep.from_dict(data)
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(EXIT_DATA, f"cannot parse certificate {path}: {exc}")


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _rep_csv(rep: Optional[FactorRep]) -> str:
    if rep is None:
        return ""
    header = ["delta"] + [f"gamma_{k}" for k in range(rep.m)]
    rows = np.column_stack([rep.delta, rep.gamma])
    return ",".join(header) + "\n" + matrix_to_csv(rows)


def _write(args, text: str) -> None:
    if args.out in (None, "-"):
        sys.stdout.write(text)
        return
    try:
        Path(args.out).write_text(text)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {args.out}: {exc.strerror or exc}")


def _emit(args, report: dict, rep: Optional[FactorRep] = None) -> None:
    if args.format == "csv":
        _write(args, f"# status: {report.get('status', 'n/a')}\n" + _rep_csv(rep))
    else:
        _write(args, _dumps(report))


# -- configuration -------------------------------------------------------


def _tolerances(args) -> Tolerances:
    overrides = {
        "zero": args.tol_zero,
        "fit": args.tol_fit,
        "reject": args.tol_reject,
        "pd": args.eps_pd,
    }
    try:
        return replace(DEFAULT_TOL, **{k: v for k, v in overrides.items() if v is not None})
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc))


def _index_list(text: str) -> List[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated indices, got {text!r}")


def _pattern(text: str):
    name, _, rest = text.partition(":")
    if name == "generic":
        return Generic()
    if name == "two-block":
        return TwoBlock()
    if name in ("zero-rows", "rank-one"):
        rows = tuple(_index_list(rest))
        return ZeroRows(rows) if name == "zero-rows" else RankOneSubset(rows)
    raise argparse.ArgumentTypeError(
        f"unknown pattern {text!r}; use generic, two-block, zero-rows:i,j or rank-one:i,j,k")


def _build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--m", type=int, choices=(0, 1, 2), default=1,
                        help="number of factors (default 1)")
    common.add_argument("--restarts", type=int, default=DEFAULT_RESTARTS)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--tol-zero", type=float)
    common.add_argument("--tol-fit", type=float)
    common.add_argument("--tol-reject", type=float)
    common.add_argument("--eps-pd", type=float)
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--out", help="output file (default stdout)")

    parser = _Parser(prog="factor-gate", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help_):
        return sub.add_parser(name, parents=[common], help=help_)

    p = command("decide", "decide membership of a matrix directly")
    p.add_argument("input", help="CSV or JSON matrix, '-' for stdin")

    p = command("decide-reduced", "decide through all principal submatrices")
    p.add_argument("input")
    p.add_argument("--subset-size", type=int)
    p.add_argument("--full-scan", action="store_true", help="check every subset")

    p = command("construct", "build a certificate by induction on the size")
    p.add_argument("input")

    p = command("glue", "glue certificates of the two leading/trailing margins")
    p.add_argument("input")
    p.add_argument("--top", required=True, help="certificate JSON for rows 0..p-2")
    p.add_argument("--bottom", required=True, help="certificate JSON for rows 1..p-1")
    p.add_argument("--B", dest="B", type=_index_list, required=True)
    p.add_argument("--C", dest="C", type=_index_list, required=True)

    p = command("example", "emit the block counterexample")
    p.add_argument("--certificates", action="store_true",
                   help="include a certificate for every one-index deletion")

    p = command("random", "emit a random member with its generating certificate")
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--pattern", type=_pattern, default=Generic())

    p = command("verify", "randomized check of the submatrix reduction")
    p.add_argument("--p", type=int, action="append",
                   help="dimension (repeatable, default 2(m+1)..8)")
    p.add_argument("--trials", type=int, default=20,
                   help="instances per dimension, half of them perturbed")
    p.add_argument("--magnitude", type=float, default=0.2)

    p = command("fit", "run the multistart least-squares fit")
    p.add_argument("input")
    return parser


# -- commands ------------------------------------------------------------


def _verdict_report(v: Verdict, m: int, p: int) -> dict:
    report = v.to_dict()
    report.update(m=m, p=p)
    return report


def cmd_decide(args) -> int:
    sigma = load_matrix(args.input)
    tol = _tolerances(args)
    v = decide(sigma, args.m, tol, restarts=args.restarts, seed=args.seed)
    _emit(args, _verdict_report(v, args.m, sigma.shape[0]), v.certificate)
    return _STATUS_EXIT[v.status]


def cmd_decide_reduced(args) -> int:
    sigma = load_matrix(args.input)
    tol = _tolerances(args)
    try:
        v = decide_by_submatrices(sigma, args.m, args.subset_size, tol,
                                  restarts=args.restarts, seed=args.seed,
                                  full_scan=args.full_scan)
    except ValueError as exc:
        if isinstance(exc, NotPositiveDefiniteError):
            raise
        raise CliError(EXIT_USAGE, str(exc))
    _emit(args, _verdict_report(v, args.m, sigma.shape[0]))
    return _STATUS_EXIT[v.status]


def cmd_construct(args) -> int:
    sigma = load_matrix(args.input)
    tol = _tolerances(args)
    p = sigma.shape[0]
    if args.m == 0:
        v = decide(sigma, 0, tol)
        _emit(args, _verdict_report(v, 0, p), v.certificate)
        return _STATUS_EXIT[v.status]
    if p < 2 * (args.m + 1):
        raise CliError(EXIT_USAGE, f"construct needs p >= {2 * (args.m + 1)}, got {p}")
    try:
        built = build_by_induction(sigma, args.m, tol, restarts=args.restarts, seed=args.seed)
    except ConstructionError as exc:
        report = {"status": "failed", "step": exc.step, "error": str(exc),
                  "detail": exc.detail, "m": args.m, "p": p}
        code = EXIT_INDETERMINATE
        if exc.step == "precondition":
            status = exc.detail["verdict"]["status"]
            code = _STATUS_EXIT[Status(status)]
            report["status"] = status
        _emit(args, report)
        return code
    report = {"status": Status.MEMBER.value, "m": args.m, "p": p, **built.to_dict()}
    _emit(args, report, built.rep)
    return EXIT_MEMBER


def cmd_glue(args) -> int:
    sigma = load_matrix(args.input)
    tol = _tolerances(args)
    top, bottom = _load_rep(args.top), _load_rep(args.bottom)
    try:
        rep = glue(sigma, top, bottom, args.B, args.C, tol)
    except (GlueError, ValueError) as exc:
        raise CliError(EXIT_DATA, f"cannot glue: {exc}")
    report = {"status": Status.MEMBER.value, "certificate": rep.to_dict(),
              "max_error": rep.max_error(sigma), "p": sigma.shape[0], "m": rep.m}
    _emit(args, report, rep)
    return EXIT_MEMBER


def cmd_example(args) -> int:
    m = args.m
    sigma = tightness_example(m)
    if args.format == "csv":
        _write(args, matrix_to_csv(sigma))
        return 0
    report = {"m": m, **matrix_to_json(sigma),
              "rank_obstruction": rank_obstruction(sigma, m).to_dict()}
    if args.certificates and m >= 1:
        report["deleted_certificates"] = [
            {"dropped": i, "certificate": deleted_submatrix_certificate(m, i).to_dict()}
            for i in range(sigma.shape[0])
        ]
    _write(args, _dumps(report))
    return 0


def cmd_random(args) -> int:
    try:
        spec = GenSpec(args.p, args.m, pattern=args.pattern)
        sigma, rep = random_member(spec, args.seed)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc))
    except GenerationError as exc:
        raise CliError(EXIT_DATA, str(exc))
    if args.format == "csv":
        _write(args, matrix_to_csv(sigma))
    else:
        _write(args, _dumps({**matrix_to_json(sigma), "m": args.m, "seed": args.seed,
                             "certificate": rep.to_dict()}))
    return 0


def cmd_verify(args) -> int:
    if args.trials < 1:
        raise CliError(EXIT_USAGE, "--trials must be at least 1")
    tol = _tolerances(args)
    dims = args.p or list(range(2 * (args.m + 1), 9))
    if any(p < 2 * (args.m + 1) for p in dims):
        raise CliError(EXIT_USAGE, f"every --p must be at least {2 * (args.m + 1)}")
    summaries = []
    for k, p in enumerate(dims):
        members = (args.trials + 1) // 2
        s = equivalence_sweep(args.m, p, members, args.trials - members,
                              seed=args.seed + k, magnitude=args.magnitude, tol=tol,
                              restarts=args.restarts)
        summaries.append(s.to_dict())
    defects = sum(s["hard_disagreements"] for s in summaries)
    report = {"m": args.m, "seed": args.seed, "trials": args.trials,
              "hard_disagreements": defects, "sweeps": summaries}
    if args.format == "csv":
        keys = ["m", "p", "trials", "agreements", "hard_disagreements",
                "indeterminate_members", "indeterminate_non_members"]
        lines = [",".join(keys)] + [",".join(str(s[k]) for k in keys) for s in summaries]
        _write(args, "\n".join(lines) + "\n")
    else:
        _write(args, _dumps(report))
    return EXIT_NON_MEMBER if defects else 0


def cmd_fit(args) -> int:
    sigma = load_matrix(args.input)
    tol = _tolerances(args)
    res = fit(sigma, args.m, restarts=args.restarts, seed=args.seed, tol=tol)
    if res.max_error <= tol.fit and res.candidate.delta.min() > tol.pd:
        status = Status.MEMBER
    elif res.max_error >= tol.reject:
        status = Status.NON_MEMBER
    else:
        status = Status.INDETERMINATE
    report = {"status": status.value, "m": args.m, "p": sigma.shape[0], **res.to_dict()}
    _emit(args, report, res.candidate)
    return _STATUS_EXIT[status]


COMMANDS = {
    "decide": cmd_decide,
    "decide-reduced": cmd_decide_reduced,
    "construct": cmd_construct,
    "glue": cmd_glue,
    "example": cmd_example,
    "random": cmd_random,
    "verify": cmd_verify,
    "fit": cmd_fit,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "restarts", 1) < 1:
            raise CliError(EXIT_USAGE, "--restarts must be at least 1")
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"factor-gate: {exc}", file=sys.stderr)
        return exc.code
    except NotPositiveDefiniteError as exc:
        print(f"factor-gate: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
