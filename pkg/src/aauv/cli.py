"""Command-line front end.

Exit codes: 0 when the command's mathematical claim holds, 1 for usage or
parse errors, 2 when the claim is violated (infeasible weights, detected
bias, permutation average off ``s**2``).

Coefficient references, accepted wherever a ``<ref>`` appears::

    half            half-sample weights
    mblock=M        two-level M-block weights
    family=M,K      third-moment family (n = 2M + K)
    random=SEED     random point on the order-2 constraint sphere
    <path>          a coefficient file written by ``aauv coeffs``

Estimator flags: ``naive``, ``unbiased``, ``aauv:<ref>``,
``interp:<ref>:<lambda>``, ``third:<ref>``.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import math
import re
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import estimators as est
from . import symmetry, verify
from .estimators import CoefficientVector, Estimator, InfeasibleCoefficientsError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VIOLATED = 2

SYMMETRY_TOL = 1e-10
ENUMERATION_TOL = 1e-10
MC_Z = 4.0
SAMPLED_Z = 5.0

_DECIMAL = re.compile(r"[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- file formats -------------------------------------------------------------


def read_data(path: str) -> list[float]:
    """One decimal per line; blank lines skipped, anything else is an error."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read data file {path}: {exc.strerror}") from None
    values = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if not _DECIMAL.fullmatch(line):
            raise UsageError(f"{path}:{lineno}: not a decimal number: {line!r}")
        values.append(float(line))
    if not values:
        raise UsageError(f"{path}: no data values")
    return values


def write_coefficients(path: str, c: CoefficientVector) -> None:
    doc = {"n": c.n, "order": c.order, "c": list(c.c), "provenance": c.provenance}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def read_coefficients(path: str) -> CoefficientVector:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read coefficient file {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid coefficient file: {exc}") from None
    if not isinstance(doc, dict) or set(doc) != {"n", "order", "c", "provenance"}:
        raise UsageError(f"{path}: coefficient file needs exactly keys n, order, c, provenance")
    c, n, order = doc["c"], doc["n"], doc["order"]
    if not isinstance(c, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in c
    ):
        raise UsageError(f"{path}: 'c' must be an array of numbers")
    if not isinstance(n, int) or n != len(c):
        raise UsageError(f"{path}: n = {n!r} does not match {len(c)} coefficients")
    if order not in (2, 3):
        raise UsageError(f"{path}: order must be 2 or 3, got {order!r}")
    try:
        return CoefficientVector(tuple(c), order, str(doc["provenance"]))
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _digest(path: str) -> str:
    return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()


def resolve_coefficients(ref: str, n: Optional[int]) -> tuple[CoefficientVector, dict]:
    """Turn a coefficient reference into weights plus an input-digest entry."""
    name, eq, arg = ref.partition("=")
    try:
        if ref == "half":
            c = est.coeffs_half_sample(_need_n(n, ref))
        elif eq and name == "mblock":
            c = est.coeffs_m_block(_need_n(n, ref), _int(arg, ref))
        elif eq and name == "random":
            c = est.coeffs_random_feasible(_need_n(n, ref), _int(arg, ref))
        elif eq and name == "family":
            m, _, k = arg.partition(",")
            c = est.coeffs_third_family(_int(m, ref), _int(k, ref))
        else:
            c = read_coefficients(ref)
            return c, {"coeffs": ref + " " + _digest(ref)}
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if n is not None and c.n != n:
        raise UsageError(f"coefficients {ref!r} have length {c.n}, sample size is {n}")
    return c, {"coeffs": ref}


def _need_n(n, ref):
    if n is None:
        raise UsageError(f"coefficient reference {ref!r} needs a sample size")
    return n


def _int(text: str, ref: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise UsageError(f"bad integer {text!r} in coefficient reference {ref!r}") from None


def parse_estimator(text: str, n: Optional[int], tol: float = est.DEFAULT_TOL) -> tuple[Estimator, dict]:
    kind, _, rest = text.partition(":")
    if kind in ("naive", "unbiased"):
        if rest:
            raise UsageError(f"estimator {kind!r} takes no parameters")
        return Estimator(kind), {}
    if kind not in ("aauv", "interp", "third"):
        raise UsageError(f"unknown estimator {text!r}")
    if not rest:
        raise UsageError(f"estimator {kind!r} needs coefficients ({kind}:<ref>)")
    lam = None
    if kind == "interp":
        ref, sep, lam_text = rest.rpartition(":")
        if not sep or not _DECIMAL.fullmatch(lam_text):
            raise UsageError(f"interp estimator needs interp:<ref>:<lambda>, got {text!r}")
        rest, lam = ref, float(lam_text)
    c, inputs = resolve_coefficients(rest, n)
    full = {"aauv": "aauv", "interp": "interpolated", "third": "third_moment"}[kind]
    try:
        return Estimator(full, c, lam=lam, label=text, tol=tol), inputs
    except InfeasibleCoefficientsError:
        raise
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# -- output --------------------------------------------------------------------


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def make_record(command, argv, inputs, seed, results, claim_holds) -> dict:
    """Result record with a fixed field order shared by every command."""
    return {
        "command": command,
        "argv": list(argv),
        "inputs": inputs,
        "seed": seed,
        "results": _clean(results),
        "claim_holds": bool(claim_holds),
        "timestamp": None,
    }


class _Output:
    def __init__(self, args, argv):
        self.args = args
        self.argv = _echo_argv(argv)
        self.records: list[dict] = []

    def emit(self, inputs, seed, results, claim_holds, title: str = ""):
        rec = make_record(self.args.command, self.argv, inputs, seed, results, claim_holds)
        self.records.append(rec)
        if self.args.json:
            print(json.dumps(rec))
        else:
            if title:
                print(f"[{title}]")
            for key, value in rec["results"].items():
                print(f"{key}: {_fmt(value)}")

    def finish(self) -> int:
        out = getattr(self.args, "out", None)
        if out and self.args.command != "coeffs":
            stamp = _dt.datetime.now(_dt.timezone.utc).isoformat()
            recs = [dict(r, timestamp=stamp) for r in self.records]
            body = recs[0] if len(recs) == 1 else recs
            Path(out).write_text(json.dumps(body, indent=2) + "\n", encoding="utf-8")
        return EXIT_OK if all(r["claim_holds"] for r in self.records) else EXIT_VIOLATED


def _echo_argv(argv) -> list[str]:
    # --workers only changes scheduling; leaving it out keeps records
    # identical across worker counts
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
        elif a == "--workers":
            skip = True
        elif not a.startswith("--workers="):
            out.append(a)
    return out


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    if value is None:
        return "-"
    return str(value)


# -- commands ------------------------------------------------------------------


def cmd_coeffs(args, out: _Output) -> int:
    try:
        if args.family == "half":
            c = est.coeffs_half_sample(_required(args.n, "--n"))
        elif args.family == "mblock":
            c = est.coeffs_m_block(_required(args.n, "--n"), _required(args.m, "--m"))
        elif args.family == "third":
            c = est.coeffs_third_family(_required(args.m, "--m"), _required(args.k, "--k"))
        else:
            c = est.coeffs_random_feasible(_required(args.n, "--n"), args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    r1, r2 = c.residuals()
    ok = c.is_feasible(args.tol)
    if args.out:
        write_coefficients(args.out, c)
    results = {
        "n": c.n,
        "order": c.order,
        "provenance": c.provenance,
        "c": list(c.c),
        "residual_sum": r1,
        "residual_sumsq" if c.order == 2 else "residual_k3": r2,
        "feasible": ok,
    }
    seed = args.seed if args.family == "random" else None
    out.emit({}, seed, results, ok)
    if not ok:
        print("error: generated coefficients violate the conditions", file=sys.stderr)
    return out.finish()


def _required(value, flag):
    if value is None:
        raise UsageError(f"{flag} is required")
    return value


def cmd_estimate(args, out: _Output) -> int:
    x = read_data(args.data)
    inputs = {"data": args.data + " " + _digest(args.data)}
    spec = args.estimator
    if spec in ("aauv", "third") and args.coeffs:
        spec = f"{spec}:{args.coeffs}"
    elif spec == "interp" and args.coeffs:
        if args.lam is None:
            raise UsageError("interp estimator needs --lambda")
        spec = f"interp:{args.coeffs}:{args.lam!r}"
    elif spec in ("aauv", "third", "interp"):
        raise UsageError(f"estimator {spec!r} needs coefficients (--coeffs)")
    estimator, extra = parse_estimator(spec, len(x), args.tol)
    inputs.update(extra)
    report = estimator(x)
    results = {
        "estimator": report.estimator_id,
        "n": report.n,
        "estimate": report.estimate,
        "lambda": report.lam,
        "coefficients": None if report.coefficients is None else list(report.coefficients.c),
    }
    out.emit(inputs, None, results, True)
    return out.finish()


def cmd_check(args, out: _Output) -> int:
    c = read_coefficients(args.coeffs)
    order = args.order or c.order
    c = c.with_order(order)
    r1, r2 = c.residuals()
    feasible = c.is_feasible(args.tol)
    results = {"n": c.n, "order": order, "residual_sum": r1}
    if order == 2:
        lo, hi = est.coeff_bound(c.n) if c.n >= 2 else (math.nan, math.nan)
        slack = 1e-12
        violations = [i for i, v in enumerate(c.c) if not lo - slack <= v <= hi + slack]
        results.update(
            residual_sumsq=r2,
            bound=[lo, hi],
            bound_violations=violations,
            pairwise_product_sum=est.pairwise_product_sum(c),
            pairwise_expected=(c.n - 2) / c.n,
        )
    else:
        results["residual_k3"] = r2
    results["feasible"] = feasible
    out.emit({"coeffs": args.coeffs + " " + _digest(args.coeffs)}, None, results, feasible)
    return out.finish()


def cmd_symmetrize(args, out: _Output) -> int:
    x = read_data(args.data)
    inputs = {"data": args.data + " " + _digest(args.data)}
    c, extra = resolve_coefficients(args.coeffs, len(x))
    inputs.update(extra)
    try:
        if args.samples is None:
            if len(x) > symmetry.EXACT_MAX_N:
                raise UsageError(
                    f"exact mode is capped at N <= {symmetry.EXACT_MAX_N} (N = {len(x)}); "
                    "use --samples REPS"
                )
            if args.lam is None:
                res = symmetry.permutation_average_exact(x, c, args.tol)
            else:
                res = symmetry.permutation_average_lambda_exact(x, c, args.lam, args.tol)
        else:
            res = symmetry.permutation_average_sampled(
                x, c, args.lam, args.samples, args.seed, args.workers, args.tol
            )
    except InfeasibleCoefficientsError:
        raise
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    diff = res.difference
    if res.mode == "exact" or res.stderr == 0:
        ok = abs(diff) <= SYMMETRY_TOL * max(1.0, res.reference_s2)
    else:
        ok = abs(diff) <= SAMPLED_Z * res.stderr
    results = {
        "mode": res.mode,
        "lambda": res.lam,
        "permutations_used": res.permutations_used,
        "q": res.q,
        "stderr": res.stderr,
        "s2": res.reference_s2,
        "difference": diff,
    }
    out.emit(inputs, args.seed if res.mode == "sampled" else None, results, ok)
    return out.finish()


def _dist(text: str) -> verify.DistributionSpec:
    try:
        return verify.parse_distribution(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _estimators(specs, n, tol):
    if not specs:
        raise UsageError("at least one --estimator is required")
    ests, inputs = [], {}
    for i, spec in enumerate(specs):
        e, extra = parse_estimator(spec, n, tol)
        ests.append(e)
        if extra:
            inputs[f"estimator[{i}]"] = extra["coeffs"]
    return ests, inputs


def cmd_mc(args, out: _Output) -> int:
    dist = _dist(args.dist)
    if args.reps < verify.MIN_REPS:
        raise UsageError(f"reps >= {verify.MIN_REPS} required, got {args.reps}")
    if args.n < 2:
        raise UsageError(f"--n must be >= 2, got {args.n}")
    ests, inputs = _estimators(args.estimator, args.n, args.tol)
    inputs = {"dist": dist.label, **inputs}
    results = verify.run_variance_comparison(
        dist, args.n, args.reps, args.seed, ests, workers=args.workers
    )
    first = results[0]
    for e, r in zip(ests, results):
        expected_bias = -dist.sigma2 / args.n if e.kind == "naive" else 0.0
        gap = r.empirical_bias - expected_bias
        ok = abs(gap) <= MC_Z * r.bias_stderr
        body = r.as_dict()
        body["expected_bias"] = expected_bias
        if r is first:
            body["paired_var_diff_vs_first"] = None
            body["paired_stderr_vs_first"] = None
        else:
            cmp = verify.paired_variance_difference(r, first)
            body["paired_var_diff_vs_first"] = cmp.difference
            body["paired_stderr_vs_first"] = cmp.stderr
        out.emit(inputs, args.seed, body, ok, title=e.label)
    return out.finish()


def cmd_enumerate(args, out: _Output) -> int:
    dist = _dist(args.dist)
    if not dist.is_discrete:
        raise UsageError("enumeration requires discrete distribution")
    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    ests, inputs = _estimators(args.estimator, args.n, args.tol)
    inputs = {"dist": dist.label, **inputs}
    for e in ests:
        try:
            value = verify.exact_expectation(dist, args.n, e)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        target = dist.target(e.moment)
        diff = value - target
        ok = abs(diff) <= ENUMERATION_TOL * max(1.0, abs(target))
        body = {
            "estimator": e.label,
            "n": args.n,
            "outcomes": len(dist.params["values"]) ** args.n,
            "expectation": value,
            "target": target,
            "difference": diff,
        }
        out.emit(inputs, None, body, ok, title=e.label)
    return out.finish()


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aauv", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out=True):
        p.add_argument("--json", action="store_true", help="machine-readable output")
        p.add_argument("--tol", type=float, default=est.DEFAULT_TOL, help="feasibility tolerance")
        if out:
            p.add_argument("--out", help="write the result record (or coefficient file) here")

    p = sub.add_parser("coeffs", help="generate a coefficient file")
    p.add_argument("family", choices=["half", "mblock", "third", "random"])
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int, default=0)
    common(p)

    p = sub.add_parser("estimate", help="evaluate one estimator on a data file")
    p.add_argument("--data", required=True)
    p.add_argument("--estimator", required=True)
    p.add_argument("--coeffs")
    p.add_argument("--lambda", dest="lam", type=float)
    common(p)

    p = sub.add_parser("check", help="report condition residuals of a coefficient file")
    p.add_argument("coeffs")
    p.add_argument("--order", type=int, choices=[2, 3])
    common(p)

    p = sub.add_parser("symmetrize", help="permutation-average an AAUV or s_lambda^2")
    p.add_argument("--data", required=True)
    p.add_argument("--coeffs", required=True)
    p.add_argument("--lambda", dest="lam", type=float)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--exact", action="store_true", help="enumerate all N! orderings (default)")
    mode.add_argument("--samples", type=int, metavar="REPS", help="sample REPS random orderings")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    common(p)

    p = sub.add_parser("mc", help="seeded Monte Carlo bias and variance experiment")
    p.add_argument("--dist", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--reps", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--estimator", action="append")
    p.add_argument("--workers", type=int, default=1)
    common(p)

    p = sub.add_parser("enumerate", help="exact expectation over a discrete law")
    p.add_argument("--dist", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--estimator", action="append")
    common(p)
    return parser


COMMANDS = {
    "coeffs": cmd_coeffs,
    "estimate": cmd_estimate,
    "check": cmd_check,
    "symmetrize": cmd_symmetrize,
    "mc": cmd_mc,
    "enumerate": cmd_enumerate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    out = _Output(args, argv)
    try:
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleCoefficientsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VIOLATED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
