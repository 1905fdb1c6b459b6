"""Experiment harness: load inputs, fan trials out, and build reports.

Reports are self-contained: they store every released answer next to the
true answers recomputed directly from the database, so the error figures can
be reproduced from the report alone (``verify_report``).  Serialized reports
carry a schema version and never include timing, which keeps a fixed-seed
run byte-identical; wall-clock lives on the in-memory report only.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from statistics import median

import numpy as np

from . import offline, online
from .queries import Database, Workload, load_database, load_workloads

SCHEMA_VERSION = 1

MECHANISMS = ("offline-query", "offline-analyst", "online")


@dataclass
class ExperimentConfig:
    mechanism: str
    data_path: str
    workload_path: str
    universe_size: int | None = None
    epsilon: float = 1.0
    delta: float = 1e-6
    beta: float = 0.05
    overrides: dict = field(default_factory=dict)
    seed: int = 0
    trials: int = 1
    out_path: str | None = None
    csv_path: str | None = None
    threads: int | None = None

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")

    def worker_count(self) -> int:
        env = os.environ.get("PRIVDUAL_THREADS")
        if env:
            return max(1, int(env))
        if self.threads:
            return max(1, self.threads)
        return min(self.trials, os.cpu_count() or 1)


@dataclass
class AccuracyReport:
    """Aggregated experiment outcome; ``to_json`` is deterministic."""

    config: ExperimentConfig
    parameters: dict
    true_answers: dict[str, float]
    trials: list[dict]
    wall_clock_s: float

    @property
    def median_max_error(self) -> float:
        return median(t["max_error"] for t in self.trials)

    @property
    def max_error(self) -> float:
        return max(t["max_error"] for t in self.trials)

    @property
    def budget_violated(self) -> bool:
        return any(
            any(f.startswith("sv-budget-violated") for f in t.get("flags", []))
            for t in self.trials
        )

    def summary(self) -> dict:
        per_trial = [t["max_error"] for t in self.trials]
        medians = [t["median_error"] for t in self.trials]
        return {
            "trials": len(self.trials),
            "median_max_error": median(per_trial),
            "max_error": max(per_trial),
            "median_error": median(medians),
            "budget_violated": self.budget_violated,
        }

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "mechanism": self.config.mechanism,
            "seed": self.config.seed,
            "parameters": self.parameters,
            "true_answers": self.true_answers,
            "trials": self.trials,
            "summary": self.summary(),
        }

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("trial,query_id,true,released,error\n")
            for i, trial in enumerate(self.trials):
                for qid in sorted(trial["answers"]):
                    true = self.true_answers[qid]
                    released = trial["answers"][qid]
                    fh.write(
                        f"{i},{qid},{true!r},{released!r},{abs(released - true)!r}\n"
                    )


def load_inputs(config: ExperimentConfig) -> tuple[Database, list[Workload]]:
    database = load_database(config.data_path, config.universe_size)
    workloads = load_workloads(config.workload_path, database.universe)
    if not workloads:
        raise ValueError(f"{config.workload_path}: no queries found")
    return database, workloads


def derive_parameters(
    config: ExperimentConfig, database: Database, workloads: list[Workload]
):
    if config.mechanism == "offline-query":
        closed_count = 2 * sum(len(wl.queries) for wl in workloads)
        return offline.derive_params_alg3(
            database.n, database.universe.size, closed_count,
            config.epsilon, config.delta, config.beta, config.overrides,
        )
    if config.mechanism == "offline-analyst":
        return offline.derive_params_alg4(
            database.n, database.universe.size, len(workloads),
            config.epsilon, config.delta, config.beta, config.overrides,
        )
    k = sum(len(wl.queries) for wl in workloads)
    return online.derive_params_online(
        database.n, database.universe.size, k,
        config.epsilon, config.delta, config.beta, config.overrides,
    )


def _params_json(params) -> dict:
    out = {}
    for key, value in vars(params).items():
        if isinstance(value, (int, float, str, bool)) or value is None:
            out[key] = value
        elif isinstance(value, tuple):
            out[key] = list(value)
    return out


def _offline_trial(
    config: ExperimentConfig, database: Database, workloads: list[Workload],
    params, trial_index: int,
) -> dict:
    rng = np.random.default_rng([config.seed, trial_index])
    if config.mechanism == "offline-query":
        result = offline.release_one_query(database, workloads, params, rng)
    else:
        result = offline.release_one_analyst(database, workloads, params, rng)
    truth = database.row_fractions()
    answers = {}
    errors = []
    for wl in workloads:
        output = result.outputs[wl.analyst_id]
        for q in wl.queries:
            released = output.answer(q)
            answers[q.query_id] = released
            errors.append(abs(released - float(q.values @ truth)))
    return {
        "trial": trial_index,
        "answers": answers,
        "max_error": max(errors),
        "median_error": median(errors),
        "flags": list(result.flags),
        "flagged": list(result.flagged_ids),
        "ledger": result.ledger.to_json(),
        "bundle": {
            "synopsis": list(result.synopsis.sampled_rows),
            "analysts": {
                aid: {"patches": sorted(patches.items())}
                for aid, patches in result.synopsis.patches.items()
            },
            "ledger": result.ledger.to_json(),
            "flags": list(result.flags),
        },
    }


def _online_trial(
    config: ExperimentConfig, database: Database, workloads: list[Workload],
    params, trial_index: int,
) -> dict:
    rng = np.random.default_rng([config.seed, trial_index])
    sequence = [q for wl in workloads for q in wl.queries]
    records, state = online.answer_sequence(database, sequence, params, rng)
    truth = database.row_fractions()
    answers = {}
    errors = []
    for q, rec in zip(sequence, records):
        answers[q.query_id] = rec.answer
        errors.append(abs(rec.answer - float(q.values @ truth)))
    return {
        "trial": trial_index,
        "answers": answers,
        "max_error": max(errors),
        "median_error": median(errors),
        "flags": [],
        "records": [r.to_json() for r in records],
        "epochs": state.epoch,
        "bad_rounds": state.bad_rounds,
    }


def run_experiment(config: ExperimentConfig) -> AccuracyReport:
    """Run ``trials`` independent seeded instances and aggregate errors.

    Trials fan out across worker threads with independently derived rng
    streams; results are keyed by trial index, so scheduling cannot change
    the report.
    """
    started = time.perf_counter()
    database, workloads = load_inputs(config)
    params = derive_parameters(config, database, workloads)
    trial_fn = _online_trial if config.mechanism == "online" else _offline_trial

    def run(i: int) -> dict:
        return trial_fn(config, database, workloads, params, i)

    workers = config.worker_count()
    if workers > 1 and config.trials > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trials = list(pool.map(run, range(config.trials)))
    else:
        trials = [run(i) for i in range(config.trials)]
    truth = database.row_fractions()
    true_answers = {
        q.query_id: float(q.values @ truth)
        for wl in workloads
        for q in wl.queries
    }
    report = AccuracyReport(
        config=config,
        parameters=_params_json(params),
        true_answers=true_answers,
        trials=trials,
        wall_clock_s=time.perf_counter() - started,
    )
    return report


def verify_report(report_json: dict, tolerance: float = 1e-12) -> bool:
    """Recompute every error figure from the stored answers and truths."""
    truths = report_json["true_answers"]
    per_trial_max = []
    per_trial_median = []
    for trial in report_json["trials"]:
        errors = [
            abs(v - truths[qid]) for qid, v in trial["answers"].items()
        ]
        if abs(max(errors) - trial["max_error"]) > tolerance:
            return False
        if abs(median(errors) - trial["median_error"]) > tolerance:
            return False
        per_trial_max.append(max(errors))
        per_trial_median.append(median(errors))
    summary = report_json["summary"]
    if abs(median(per_trial_max) - summary["median_max_error"]) > tolerance:
        return False
    if abs(max(per_trial_max) - summary["max_error"]) > tolerance:
        return False
    if abs(median(per_trial_median) - summary["median_error"]) > tolerance:
        return False
    return True
