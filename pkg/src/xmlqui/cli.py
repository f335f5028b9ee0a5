"""Command-line entry points, the fixture corpus and the benchmark harness."""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .chains import chains_dot, chains_json, infer_query, infer_update, schema_graph
from .evaluator import UpdateError, apply_upl, build_upl, eval_query
from .finite import k_of
from .independence import Result, Verdict, check
from .lang import LangError, parse_expr, parse_query, parse_update
from .schema import DtdError, Dtd, parse_dtd, validate
from .xmlstore import DocumentError, Tree, enumerate_valid, parse_document, serialize, serialize_tree, value_equivalent

EXIT_INDEPENDENT, EXIT_DEPENDENT, EXIT_ERROR = 0, 1, 2


# -- fixtures ------------------------------------------------------------------


def fixture_text(name: str) -> str:
    return resources.files("xmlqui").joinpath("fixtures", name).read_text()


def load_schema(name: str) -> Dtd:
    return parse_dtd(fixture_text(name))


def corpus() -> list[dict]:
    return json.loads(fixture_text("corpus.json"))


# -- dynamic oracle ------------------------------------------------------------


@dataclass
class OracleReport:
    instances: int = 0
    update_errors: int = 0
    invalid_results: int = 0
    checked: int = 0
    counterexamples: int = 0
    first_counterexample: str | None = None

    def merge(self, other: "OracleReport"):
        self.instances += other.instances
        self.update_errors += other.update_errors
        self.invalid_results += other.invalid_results
        self.checked += other.checked
        self.counterexamples += other.counterexamples
        if self.first_counterexample is None:
            self.first_counterexample = other.first_counterexample


def oracle_instance(d: Dtd, q, u, t: Tree, report: OracleReport):
    """Run one instance; updates whose result leaves the schema are skipped."""
    report.instances += 1
    try:
        store_w, upl = build_upl(t, None, u)
        updated = Tree(apply_upl(t, store_w, upl), t.root)
    except UpdateError:
        report.update_errors += 1
        return
    if not validate(d, updated):
        report.invalid_results += 1
        return
    report.checked += 1
    s1, r1 = eval_query(t, None, q)
    s2, r2 = eval_query(updated, None, q)
    if not value_equivalent(s1, r1, s2, r2):
        report.counterexamples += 1
        if report.first_counterexample is None:
            report.first_counterexample = serialize_tree(t)


def _shard(args) -> OracleReport:
    d, q, u, max_depth, max_repeat, index, workers = args
    report = OracleReport()
    for i, t in enumerate(enumerate_valid(d, max_repeat=max_repeat, max_depth=max_depth)):
        if i % workers == index:
            oracle_instance(d, q, u, t, report)
    return report


def run_oracle(d: Dtd, q, u, max_depth: int = 4, max_repeat: int = 2, workers: int | None = None) -> OracleReport:
    """Exhaustive dynamic check over all valid trees within the bounds."""
    if workers is None:
        workers = max(1, int(os.environ.get("XMLQUI_THREADS", "1")))
    jobs = [(d, q, u, max_depth, max_repeat, i, workers) for i in range(workers)]
    if workers == 1:
        return _shard(jobs[0])
    report = OracleReport()
    with ProcessPoolExecutor(workers) as pool:
        for part in pool.map(_shard, jobs):
            report.merge(part)
    return report


# -- benchmark family ------------------------------------------------------------


def recursive_schema(n: int) -> Dtd:
    """n types, each defined as a repetition of a choice among all n."""
    tags = [f"t{i}" for i in range(1, n + 1)]
    body = "(" + " | ".join(tags) + ")*"
    return parse_dtd("".join(f"<!ELEMENT {t} {body}>\n" for t in tags))


def descendant_path(m: int) -> str:
    return "/descendant::node()" * m


def bench_cell(n: int, m: int, k: int) -> dict:
    d = recursive_schema(n)
    q = parse_query(descendant_path(m))
    schema_graph.cache_clear()
    t0 = time.perf_counter()
    inf = infer_query(d, k, q)
    elapsed = time.perf_counter() - t0
    return {"n": n, "m": m, "k": k, "seconds": elapsed, **inf.cdag.stats()}


def loglog_slope(xs, ys) -> float:
    lx = [math.log(x) for x in xs]
    ly = [math.log(max(y, 1e-6)) for y in ys]
    mx, my = sum(lx) / len(lx), sum(ly) / len(ly)
    num = sum((a - mx) * (b - my) for a, b in zip(lx, ly))
    den = sum((a - mx) ** 2 for a in lx)
    return num / den


def bench_r(ns=(1, 3, 5, 10), ms=(1, 5, 10), offsets=(0, 5, 10)) -> dict:
    cells = [bench_cell(n, m, m + off) for n in ns for m in ms for off in offsets]
    slopes = {}
    for m in ms:
        for off in offsets:
            row = [c for c in cells if c["m"] == m and c["k"] == m + off]
            # schema size: n declarations with n alternatives each
            slopes[f"m={m},k=m+{off}"] = loglog_slope([c["n"] ** 2 for c in row], [c["seconds"] for c in row])
    return {"cells": cells, "slopes": slopes}


def bench_corpus() -> list[dict]:
    out = []
    for case in corpus():
        d = load_schema(case["schema"])
        q, u = parse_query(case["query"]), parse_update(case["update"])
        t0 = time.perf_counter()
        verdict = check(d, q, u, case.get("k"))
        out.append({"name": case["name"], "verdict": verdict.result.value, "ms": (time.perf_counter() - t0) * 1e3})
    return out


# -- reports -----------------------------------------------------------------------


def report_json(verdict: Verdict, parse_ms: float) -> dict:
    timings = dict(verdict.stats.get("timings_ms", {}))
    return {
        "verdict": verdict.result.value,
        "k_q": verdict.k_q,
        "k_u": verdict.k_u,
        "k": verdict.k_used,
        "witnesses": [w.to_json() for w in verdict.witnesses],
        "timings_ms": {"parse": parse_ms, **timings},
        "cdag_stats": verdict.stats.get("cdag_stats", {}),
    }


def _read(path: str) -> str:
    return Path(path).read_text()


def cmd_analyze(args) -> int:
    t0 = time.perf_counter()
    d = parse_dtd(_read(args.schema))
    q, u = parse_query(_read(args.query)), parse_update(_read(args.update))
    parse_ms = (time.perf_counter() - t0) * 1e3
    verdict = check(d, q, u, args.k)
    if args.format == "json":
        print(json.dumps(report_json(verdict, parse_ms), indent=2))
    else:
        print(f"verdict: {verdict.result.value}")
        print(f"k_q={verdict.k_q} k_u={verdict.k_u} k={verdict.k_used}")
        if args.verbose:
            for name, e in (("query", q), ("update", u)):
                bound = k_of(e)
                table = " ".join(f"{a}={f}" for a, f in bound.frequencies.items())
                print(f"F({name}): {table}  R({name})={bound.rec_component}")
        for w in verdict.witnesses:
            print(f"  {w.kind.value}: {'.'.join(w.query_chain)} vs {w.update_chain}")
    return EXIT_INDEPENDENT if verdict.result is Result.INDEPENDENT else EXIT_DEPENDENT


def cmd_chains(args) -> int:
    d = parse_dtd(_read(args.schema))
    e = parse_expr(_read(args.expr), args.role)
    k = args.k or max(1, k_of(e).k)
    inf = infer_query(d, k, e) if args.role == "query" else infer_update(d, k, e)
    if args.format == "dot" and not args.materialize:
        print(chains_dot(inf), end="")
    else:
        print(chains_json(inf))
    return 0


def cmd_eval(args) -> int:
    t = parse_document(_read(args.doc))
    if args.query:
        store, result = eval_query(t, None, parse_query(_read(args.query)))
        for loc in result:
            print(serialize(store, loc))
    else:
        store_w, upl = build_upl(t, None, parse_update(_read(args.update)))
        print(serialize_tree(Tree(apply_upl(t, store_w, upl), t.root)))
    return 0


def cmd_verify(args) -> int:
    d = parse_dtd(_read(args.schema))
    q, u = parse_query(_read(args.query)), parse_update(_read(args.update))
    verdict = check(d, q, u, args.k)
    report = run_oracle(d, q, u, args.max_depth, args.max_repeat)
    sound = not (verdict.result is Result.INDEPENDENT and report.counterexamples)
    out = {
        "static": verdict.result.value,
        "k": verdict.k_used,
        "instances": report.instances,
        "checked": report.checked,
        "update_errors": report.update_errors,
        "invalid_results": report.invalid_results,
        "counterexamples": report.counterexamples,
        "first_counterexample": report.first_counterexample,
        "sound": sound,
    }
    if report.checked == 0:
        out["note"] = "no applicable instance"
    print(json.dumps(out, indent=2))
    return EXIT_INDEPENDENT if sound else EXIT_DEPENDENT


def cmd_bench(args) -> int:
    if args.family == "corpus":
        for row in bench_corpus():
            print(f"{row['name']:28s} {row['verdict']:16s} {row['ms']:9.2f} ms")
        return 0
    ns = tuple(args.n) if args.n else (1, 3, 5, 10)
    ms = tuple(args.m) if args.m else (1, 5, 10)
    result = bench_r(ns, ms)
    print(f"{'n':>3} {'m':>3} {'k':>3} {'seconds':>9} {'nodes':>6} {'edges':>7}")
    for c in result["cells"]:
        print(f"{c['n']:>3} {c['m']:>3} {c['k']:>3} {c['seconds']:>9.3f} {c['nodes']:>6} {c['edges']:>7}")
    for key, slope in result["slopes"].items():
        print(f"log-log slope of time vs |d| ({key}): {slope:.2f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xmlqui", description="Static XML query-update independence analysis.")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="decide independence of a query and an update")
    a.add_argument("--schema", required=True)
    a.add_argument("--query", required=True)
    a.add_argument("--update", required=True)
    a.add_argument("--k", type=_positive)
    a.add_argument("--format", choices=("text", "json"), default="text")
    a.add_argument("--verbose", action="store_true")
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("chains", help="infer chains for one expression")
    c.add_argument("--schema", required=True)
    c.add_argument("--expr", required=True)
    c.add_argument("--role", choices=("query", "update"), default="query")
    c.add_argument("--k", type=_positive)
    c.add_argument("--format", choices=("dot", "json"), default="dot")
    c.add_argument("--materialize", action="store_true")
    c.set_defaults(func=cmd_chains)

    e = sub.add_parser("eval", help="evaluate a query or apply an update to a document")
    e.add_argument("--doc", required=True)
    group = e.add_mutually_exclusive_group(required=True)
    group.add_argument("--query")
    group.add_argument("--update")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", help="compare the static verdict with exhaustive evaluation")
    v.add_argument("--schema", required=True)
    v.add_argument("--query", required=True)
    v.add_argument("--update", required=True)
    v.add_argument("--k", type=_positive)
    v.add_argument("--max-depth", type=_positive, default=4)
    v.add_argument("--max-repeat", type=int, default=2)
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="timing on the recursive schema family or the fixture corpus")
    b.add_argument("--family", choices=("r", "corpus"), default="r")
    b.add_argument("--n", type=_positive, nargs="*")
    b.add_argument("--m", type=_positive, nargs="*")
    b.set_defaults(func=cmd_bench)
    return p


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, DtdError, LangError, DocumentError, UpdateError, NameError) as exc:
        print(f"xmlqui: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
