"""Command-line front end.

Subcommands: ``release`` (offline mechanisms), ``online`` (fixed-sequence
mechanism, JSONL output), ``audit`` (empirical adjacency probe), and
``params`` (print derived parameter tables).  Every subcommand honors
``--seed`` end to end; with a fixed seed the written outputs are
byte-identical across runs.

Exit codes: 0 success, 1 input/IO errors, 2 usage errors, 3 success with a
budget-violation flag raised.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import audit as audit_mod
from . import harness, offline, online
from .queries import WorkloadError, load_database, load_workloads

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_USAGE = 2
EXIT_BUDGET_FLAG = 3


def _add_privacy_flags(p: argparse.ArgumentParser):
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=1e-6)
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)


def _add_io_flags(p: argparse.ArgumentParser):
    p.add_argument("--data", required=True, help="database CSV")
    p.add_argument("--workload", required=True, help="workload JSON")
    p.add_argument("--universe", type=int, default=None,
                   help="universe size (required for single-column CSVs)")
    p.add_argument("--out", default=None, help="write results here")
    p.add_argument("--json", action="store_true",
                   help="print the deterministic JSON result to stdout")


def _override_args(p: argparse.ArgumentParser, names: list[str]):
    for name in names:
        p.add_argument(f"--override-{name}", type=float, default=None,
                       dest=f"override_{name.replace('-', '_')}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="privdual",
        description="Differentially private query release with analyst privacy",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    rel = sub.add_parser("release", help="offline release mechanisms")
    rel.add_argument("--mechanism", choices=["offline-query", "offline-analyst"],
                     default="offline-query")
    _add_io_flags(rel)
    _add_privacy_flags(rel)
    rel.add_argument("--trials", type=int, default=1)
    rel.add_argument("--csv", default=None, help="per-query error table CSV")
    _override_args(rel, ["T", "eta", "s", "threshold",
                         "mw-epsilon", "mw-delta", "mw-rounds", "mw-eta"])

    onl = sub.add_parser("online", help="online mechanism over a fixed sequence")
    _add_io_flags(onl)
    _add_privacy_flags(onl)
    _override_args(onl, ["eta", "s", "n-hat", "T", "R", "sigma", "tau"])

    aud = sub.add_parser("audit", help="empirical privacy probe")
    aud.add_argument("--mechanism",
                     choices=["offline-query", "offline-analyst", "online",
                              "randomized-response"],
                     default="randomized-response")
    aud.add_argument("--kind", choices=["data", "query", "analyst"],
                     default="data")
    aud.add_argument("--trials", type=int, default=1000)
    aud.add_argument("--bins", type=int, default=4096)
    aud.add_argument("--grid", type=float, default=0.05)
    aud.add_argument("--min-hits", type=int, default=50)
    aud.add_argument("--flip-prob", type=float, default=0.25)
    aud.add_argument("--data", default=None)
    aud.add_argument("--workload", default=None)
    aud.add_argument("--universe", type=int, default=None)
    aud.add_argument("--row-from", type=int, default=None)
    aud.add_argument("--row-to", type=int, default=None)
    aud.add_argument("--analyst", default=None,
                     help="analyst whose input changes (query/analyst kinds)")
    aud.add_argument("--query-id", default=None,
                     help="query dropped for query adjacency")
    aud.add_argument("--out", default=None)
    aud.add_argument("--json", action="store_true")
    _add_privacy_flags(aud)
    _override_args(aud, ["T", "eta", "s", "threshold", "sigma", "tau",
                         "n-hat", "R"])

    par = sub.add_parser("params", help="print derived parameter tables")
    par.add_argument("--mechanism",
                     choices=["offline-query", "offline-analyst", "online",
                              "lowsens"],
                     required=True)
    par.add_argument("--n", type=int, required=True)
    par.add_argument("--universe", type=int, required=True)
    par.add_argument("--queries", type=int, default=None,
                     help="closed query count (offline-query)")
    par.add_argument("--analysts", type=int, default=None)
    par.add_argument("--k", type=int, default=None, help="sequence length")
    par.add_argument("--sensitivity", type=float, default=None)
    par.add_argument("--epsilon", type=float, default=1.0)
    par.add_argument("--delta", type=float, default=1e-6)
    par.add_argument("--beta", type=float, default=0.05)
    par.add_argument("--json", action="store_true")
    return parser


def _collect_overrides(args, names: list[str], int_names: set[str]) -> dict:
    overrides = {}
    for name in names:
        value = getattr(args, f"override_{name.replace('-', '_')}", None)
        if value is not None:
            key = {"T": "rounds", "n-hat": "n_hat", "R": "bad_round_cap",
                   "threshold": "sv_threshold",
                   "mw-epsilon": "mw_epsilon", "mw-delta": "mw_delta",
                   "mw-rounds": "mw_rounds", "mw-eta": "mw_eta"}.get(name, name)
            overrides[key] = int(value) if key in int_names else value
    return overrides


OFFLINE_INT_OVERRIDES = {"rounds", "s", "mw_rounds"}
ONLINE_INT_OVERRIDES = {"n_hat", "epochs", "bad_round_cap"}


def _cmd_release(args) -> int:
    overrides = _collect_overrides(
        args, ["T", "eta", "s", "threshold", "mw-epsilon", "mw-delta",
               "mw-rounds", "mw-eta"], OFFLINE_INT_OVERRIDES)
    config = harness.ExperimentConfig(
        mechanism=args.mechanism, data_path=args.data,
        workload_path=args.workload, universe_size=args.universe,
        epsilon=args.epsilon, delta=args.delta, beta=args.beta,
        overrides=overrides, seed=args.seed, trials=args.trials,
        out_path=args.out, csv_path=args.csv,
    )
    report = harness.run_experiment(config)
    payload = report.to_json()
    if args.out:
        report.write(args.out)
    if args.csv:
        report.write_csv(args.csv)
    if args.json:
        print(json.dumps(payload, indent=1, sort_keys=True))
    else:
        summary = report.summary()
        print(f"mechanism       {args.mechanism}")
        print(f"trials          {summary['trials']}")
        print(f"median max err  {summary['median_max_error']:.6f}")
        print(f"max err         {summary['max_error']:.6f}")
        print(f"budget flag     {summary['budget_violated']}")
        print(f"wall clock      {report.wall_clock_s:.2f}s", file=sys.stderr)
    return EXIT_BUDGET_FLAG if report.budget_violated else EXIT_OK


def _cmd_online(args) -> int:
    overrides = _collect_overrides(
        args, ["eta", "s", "n-hat", "T", "sigma", "tau", "R"],
        ONLINE_INT_OVERRIDES)
    # --override-T maps to the epoch cap for the online mechanism.
    if "rounds" in overrides:
        overrides["epochs"] = int(overrides.pop("rounds"))
    database = load_database(args.data, args.universe)
    workloads = load_workloads(args.workload, database.universe)
    sequence = [q for wl in workloads for q in wl.queries]
    params = online.derive_params_online(
        database.n, database.universe.size, len(sequence),
        args.epsilon, args.delta, args.beta, overrides,
    )
    rng = np.random.default_rng([args.seed])
    records, state = online.answer_sequence(database, sequence, params, rng)
    lines = [json.dumps(r.to_json(), sort_keys=True) for r in records]
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    if args.json or not args.out:
        print("\n".join(lines))
    else:
        bad = sum(1 for r in records if r.round_type == "bad")
        print(f"answered {len(records)} queries; {bad} bad rounds; "
              f"{state.epoch} epochs")
    return EXIT_OK


def _audit_run_fn(args, mechanism, overrides):
    if mechanism == "randomized-response":
        return audit_mod.randomized_response_run(args.flip_prob)

    def run(db, workloads, rng):
        excluded = args.analyst if args.kind != "data" else None
        if mechanism == "offline-query":
            params = offline.derive_params_alg3(
                db.n, db.universe.size,
                2 * sum(len(w.queries) for w in workloads),
                args.epsilon, args.delta, args.beta, overrides)
            result = offline.release_one_query(db, list(workloads), params, rng)
        elif mechanism == "offline-analyst":
            params = offline.derive_params_alg4(
                db.n, db.universe.size, len(workloads),
                args.epsilon, args.delta, args.beta, overrides)
            result = offline.release_one_analyst(db, list(workloads), params, rng)
        else:
            seq = [q for w in workloads for q in w.queries]
            params = online.derive_params_online(
                db.n, db.universe.size, len(seq),
                args.epsilon, args.delta, args.beta, overrides)
            records, _ = online.answer_sequence(db, seq, params, rng)
            return np.array([
                r.answer for q, r in zip(seq, records)
                if excluded is None or q.analyst_id != excluded
            ])
        values = []
        for wl in workloads:
            if excluded is not None and wl.analyst_id == excluded:
                continue
            output = result.outputs[wl.analyst_id]
            values.extend(output.answer(q) for q in wl.queries)
        return np.array(values)

    return run


def _cmd_audit(args) -> int:
    overrides = _collect_overrides(
        args, ["T", "eta", "s", "threshold", "sigma", "tau", "n-hat", "R"],
        OFFLINE_INT_OVERRIDES | ONLINE_INT_OVERRIDES)
    if args.mechanism == "online" and "rounds" in overrides:
        overrides["epochs"] = int(overrides.pop("rounds"))
    if args.mechanism == "randomized-response":
        from .queries import Database, Universe

        universe = Universe(size=2)
        base = Database(universe=universe, counts=np.array([1, 0]))
        workloads: tuple = ()
        pair = audit_mod.AdjacencyPair(
            kind="data", base_database=base,
            other_database=Database(universe=universe, counts=np.array([0, 1])),
            base_workloads=workloads, other_workloads=workloads,
        )
    else:
        if not args.data or not args.workload:
            print("audit of a release mechanism requires --data and --workload",
                  file=sys.stderr)
            return EXIT_USAGE
        database = load_database(args.data, args.universe)
        workloads = load_workloads(args.workload, database.universe)
        if args.kind == "data":
            row_from = args.row_from
            if row_from is None:
                row_from = int(np.argmax(database.counts))
            row_to = args.row_to
            if row_to is None:
                row_to = (row_from + 1) % database.universe.size
            pair = audit_mod.make_data_adjacent(
                database, workloads, row_from, row_to)
        elif args.kind == "query":
            analyst = args.analyst or workloads[0].analyst_id
            target = next(w for w in workloads if w.analyst_id == analyst)
            qid = args.query_id or target.queries[-1].query_id
            pair = audit_mod.make_query_adjacent(database, workloads, analyst, qid)
        else:
            analyst = args.analyst or workloads[0].analyst_id
            target = next(w for w in workloads if w.analyst_id == analyst)
            from .queries import LinearQuery, Workload

            replacement = Workload(
                analyst_id=analyst,
                queries=tuple(
                    LinearQuery(query_id=q.query_id, analyst_id=analyst,
                                values=1.0 - q.values)
                    for q in target.queries
                ),
            )
            pair = audit_mod.make_analyst_adjacent(
                database, workloads, analyst, replacement)
    run_fn = _audit_run_fn(args, args.mechanism, overrides)
    result = audit_mod.audit_privacy(
        run_fn, pair, trials=args.trials, bins=args.bins, seed=args.seed,
        grid=args.grid, min_hits=args.min_hits,
    )
    payload = result.to_json()
    payload["kind"] = args.kind
    payload["mechanism"] = args.mechanism
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
            fh.write("\n")
    if args.json or not args.out:
        print(json.dumps(payload, indent=1, sort_keys=True))
    else:
        print(f"eps_hat {result.eps_hat:.4f} over {len(result.cells)} cells "
              f"({args.trials} trials/side)")
    return EXIT_OK


def _cmd_params(args) -> int:
    if args.mechanism == "offline-query":
        if args.queries is None:
            print("params --mechanism offline-query requires --queries",
                  file=sys.stderr)
            return EXIT_USAGE
        params = offline.derive_params_alg3(
            args.n, args.universe, args.queries, args.epsilon, args.delta,
            args.beta)
        table = {"T": params.rounds, "eta": params.eta, "s": params.s,
                 "s_clamped": params.clamped}
    elif args.mechanism == "offline-analyst":
        if args.analysts is None:
            print("params --mechanism offline-analyst requires --analysts",
                  file=sys.stderr)
            return EXIT_USAGE
        params = offline.derive_params_alg4(
            args.n, args.universe, args.analysts, args.epsilon, args.delta,
            args.beta)
        table = {"T": params.rounds, "eta": params.eta, "s": params.s,
                 "s_clamped": params.clamped}
    elif args.mechanism == "online":
        if args.k is None:
            print("params --mechanism online requires --k", file=sys.stderr)
            return EXIT_USAGE
        params = online.derive_params_online(
            args.n, args.universe, args.k, args.epsilon, args.delta, args.beta)
        table = {"eta": params.eta, "s": params.s, "n_hat": params.n_hat,
                 "T": params.epochs, "R": params.bad_round_cap,
                 "sigma": params.sigma, "tau": params.tau}
    else:
        if args.k is None or args.sensitivity is None:
            print("params --mechanism lowsens requires --k and --sensitivity",
                  file=sys.stderr)
            return EXIT_USAGE
        params = online.derive_params_lowsens(
            args.n, args.universe, args.k, args.sensitivity, args.epsilon)
        table = {"eta": params.eta, "s": params.s, "n_hat": params.n_hat,
                 "T": params.epochs, "R": params.bad_round_cap,
                 "sigma": params.sigma, "tau": params.tau,
                 "predicted_error": params.predicted_error,
                 "vacuous_warning": params.vacuous_warning}
    if args.json:
        print(json.dumps(table, indent=1, sort_keys=True))
    else:
        width = max(len(k) for k in table)
        for key, value in table.items():
            print(f"{key:<{width}}  {value}")
    return EXIT_OK


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "release":
            return _cmd_release(args)
        if args.command == "online":
            return _cmd_online(args)
        if args.command == "audit":
            return _cmd_audit(args)
        return _cmd_params(args)
    except (OSError, WorkloadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main():  # console entry point
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
