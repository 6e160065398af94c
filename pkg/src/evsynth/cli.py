"""Command line interface.

Subcommands
-----------
analyze     evaluate one hypothesis on one CSV dataset, emit evidence JSON
synthesize  aggregate evidence records across studies
simulate    run one of the bundled simulation studies, emit a results CSV
report      summarize a simulation results CSV (quantiles per condition)

Exit codes: 0 success, 2 hypothesis/input parse errors, 3 data or fitting
errors, 4 numeric errors (degenerate Bayes factors, sentinel conflicts,
label mismatches), 1 anything unexpected.

All randomness flows from --seed through per-task generator streams keyed
by (seed, simulation, condition, iteration, study), so outputs are
byte-identical across runs and thread counts.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from csv import DictReader, writer as csv_writer
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bf, glm, simgen, synthesis
from . import hypothesis as hyp

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_PARSE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

RESULT_COLUMNS = ("sim_id", "family", "n", "r2", "iteration", "study",
                  "hypothesis", "alternative", "fit", "complexity", "log_bf",
                  "agg_log_bf", "pmp")
REPORT_COLUMNS = ("sim_id", "family", "n", "r2", "hypothesis", "alternative",
                  "iterations", "min_log_bf", "q25_log_bf", "median_log_bf",
                  "q75_log_bf", "max_log_bf", "mean_pmp")


def _fmt(value) -> str:
    if value is None or value == "":
        return ""
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def _sigmoid(x: float) -> float:
    if x == math.inf:
        return 1.0
    if x == -math.inf:
        return 0.0
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def _parse_float(text: str) -> float:
    return float(text)  # accepts "inf" / "-inf"


# ---------------------------------------------------------------------------
# analyze

def _compact(text: str) -> str:
    return text.replace(" ", "")


def cmd_analyze(args) -> int:
    predictors = args.predictors.split(",") if args.predictors else None
    d = glm.dataset_from_csv(args.data, args.outcome, predictors,
                             family=args.family,
                             intercept=not args.no_intercept)
    fit = glm.fit(d)
    cs = hyp.parse(args.hypothesis)
    if args.alternative == "complement":
        hyp.complement(cs)  # validates inequality-only
    frac = None if args.fraction == "auto" else bf.FractionSpec.explicit(args.fraction)
    rng = simgen.rng_stream(args.seed)
    record = bf.evaluate(fit, cs, label=_compact(args.hypothesis),
                         study_id=args.study_id or Path(args.data).stem,
                         frac=frac, rng=rng, draws=args.mc_draws,
                         alternative=args.alternative)
    payload = [record.to_dict()]
    Path(args.out).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                              encoding="utf-8")
    log_bf = record.log_bf_iu if args.alternative == "unconstrained" else record.log_bf_ic
    print(f"study {record.study_id}: {record.hypothesis} vs {args.alternative}: "
          f"fit={_fmt(record.fit)} complexity={_fmt(record.complexity)} "
          f"log_bf={_fmt(log_bf)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synthesize

def load_records(paths: list[str]) -> list[bf.EvidenceRecord]:
    files: list[Path] = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            files.extend(sorted(p.glob("*.json")))
        else:
            files.append(p)
    records: list[bf.EvidenceRecord] = []
    for f in files:
        data = json.loads(f.read_text(encoding="utf-8"))
        if isinstance(data, dict) and "records" in data:
            data = data["records"]
        if isinstance(data, dict):
            data = [data]
        if not isinstance(data, list):
            raise glm.DataError(f"{f}: expected a record, a list of records, "
                                "or an object with a 'records' key")
        for item in data:
            records.append(bf.EvidenceRecord.from_dict(item))
    if not records:
        raise glm.DataError("no evidence records found")
    return records


def synthesize_records(records: list[bf.EvidenceRecord],
                       priors=None) -> tuple[synthesis.SynthesisState, str]:
    alternatives = {rec.alternative for rec in records}
    if len(alternatives) > 1:
        raise synthesis.LabelMismatchError(
            f"records mix alternatives {sorted(alternatives)}")
    alternative = alternatives.pop()
    labels = list(dict.fromkeys(rec.hypothesis for rec in records))
    if alternative == "complement" and len(labels) != 1:
        raise synthesis.LabelMismatchError(
            "the complement alternative supports a single hypothesis label")

    by_study: dict[str, dict[str, bf.EvidenceRecord]] = {}
    for rec in records:
        per = by_study.setdefault(rec.study_id, {})
        if rec.hypothesis in per:
            raise synthesis.LabelMismatchError(
                f"study {rec.study_id!r} has duplicate records for "
                f"{rec.hypothesis!r}")
        per[rec.hypothesis] = rec

    if alternative == "unconstrained":
        full_labels = labels + ["unconstrained"]
    else:
        full_labels = labels + [f"complement({labels[0]})"]
    state = synthesis.new_state(full_labels, priors)
    for study_id, per in by_study.items():
        missing = [lab for lab in labels if lab not in per]
        if missing:
            raise synthesis.LabelMismatchError(
                f"study {study_id!r} lacks records for {missing}")
        logs = {lab: per[lab].log_bf_iu for lab in labels}
        if alternative == "unconstrained":
            logs["unconstrained"] = 0.0
        else:
            rec = per[labels[0]]
            if rec.log_bf_ic is None:
                raise bf.NumericError(
                    f"study {study_id!r} has no complement Bayes factor")
            if math.isinf(rec.log_bf_iu) and math.isinf(rec.log_bf_ic):
                logs[full_labels[-1]] = _complement_log_bf(rec)
            else:
                logs[full_labels[-1]] = synthesis.aggregate_log_bf(
                    (rec.log_bf_iu, -rec.log_bf_ic))
        state = synthesis.update(state, study_id, logs)
    return state, alternative


def _complement_log_bf(rec: bf.EvidenceRecord) -> float:
    # recover log BF_cu = log((1-f)/(1-c)) when iu and ic are both sentinels
    f, c = rec.fit, rec.complexity
    num = math.log1p(-f) if f < 1.0 else -math.inf
    den = math.log1p(-c) if c < 1.0 else -math.inf
    if math.isinf(num) and math.isinf(den):
        raise bf.NumericError("cannot recover the complement Bayes factor "
                              "when fit and complexity are both 1")
    if math.isinf(num):
        return -math.inf
    if math.isinf(den):
        return math.inf
    return num - den


def cmd_synthesize(args) -> int:
    records = load_records(args.records)
    priors = None
    if args.priors != "uniform":
        priors = [float(x) for x in args.priors.split(",")]
    state, alternative = synthesize_records(records, priors)
    summary = state.as_dict()
    summary["alternative"] = alternative
    Path(args.out).write_text(
        json.dumps(_json_safe(summary), sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    if args.trail:
        with open(args.trail, "w", newline="", encoding="utf-8") as fh:
            w = csv_writer(fh)
            w.writerow(("study_id", "label", "log_bf", "cumulative_log_bf"))
            cum = {lab: 0.0 for lab in state.labels}
            for study_id, logs in state.trail:
                for lab in state.labels:
                    cum[lab] = synthesis.aggregate_log_bf((cum[lab], logs[lab]))
                    w.writerow((study_id, lab, _fmt(logs[lab]), _fmt(cum[lab])))
    pmps = summary["pmps"]
    best = max(pmps, key=pmps.get)
    print(f"aggregated {state.study_count} studies; "
          f"highest posterior probability: {best} ({_fmt(pmps[best])})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate

@dataclass(frozen=True)
class SimulationConfig:
    sim_id: int
    iterations: int
    ns: tuple[int, ...]
    r2s: tuple[float, ...]
    seed: int
    draws: int = bf.DEFAULT_DRAWS
    alternatives: tuple[str, ...] = ("unconstrained", "complement")
    n_studies: int | None = None
    decomposed: bool = False
    threads: int = 1


@dataclass
class SimulationResult:
    columns: tuple[str, ...]
    rows: list[dict]
    aggregates: list[dict]
    skips: list[dict] = field(default_factory=list)


def _log_bf_se(rec: bf.EvidenceRecord, alternative: str) -> float:
    # delta-method standard error of the per-study log Bayes factor
    f, c = rec.fit, rec.complexity
    sf, sc = rec.mc_se_fit, rec.mc_se_complexity
    if sf == 0.0 and sc == 0.0:
        return 0.0
    try:
        if alternative == "unconstrained":
            return math.sqrt((sf / f) ** 2 + (sc / c) ** 2)
        return math.sqrt((sf * (1.0 / f + 1.0 / (1.0 - f))) ** 2
                         + (sc * (1.0 / c + 1.0 / (1.0 - c))) ** 2)
    except ZeroDivisionError:
        return math.inf


def run_iteration(sim_id: int, cond_idx: int, n: int, r2: float, iteration: int,
                  seed: int, draws: int, alternatives: tuple[str, ...],
                  n_studies: int | None, decomposed: bool):
    """One simulation iteration; returns (study rows, aggregate rows, skips)."""
    plan_rng = simgen.rng_stream(seed, sim_id, cond_idx, iteration, 3)
    plan = simgen.study_plan(sim_id, n, r2, rng=plan_rng,
                             n_studies=n_studies, decomposed=decomposed)
    hyp_texts = plan[0].hypotheses
    parsed = {text: hyp.parse(text) for text in hyp_texts}
    labels = {text: _compact(text) for text in hyp_texts}

    base = dict(sim_id=sim_id, n=n, r2=r2, iteration=iteration, _cond=cond_idx)
    records: dict[str, list[bf.EvidenceRecord]] = {text: [] for text in hyp_texts}
    families: list[str] = []
    for entry in plan:
        data_rng = simgen.rng_stream(seed, sim_id, cond_idx, iteration,
                                     entry.study_index, 0)
        mc_rng = simgen.rng_stream(seed, sim_id, cond_idx, iteration,
                                   entry.study_index, 1)

        def analyze(raw: glm.Dataset) -> glm.FitResult:
            transformed = simgen.apply_transform(raw, entry.transform)
            design = glm.add_intercept(transformed) if entry.intercept else transformed
            return glm.fit(design)

        try:
            if entry.spec.family == "gaussian":
                raw = simgen.gen_dataset(entry.spec, rng=data_rng)
                fit = analyze(raw)
            else:
                _, fit = simgen.gen_dataset(entry.spec, rng=data_rng,
                                            probe=analyze, return_probe=True)
        except (simgen.PersistentSeparationError, glm.NotConvergedError) as exc:
            skip = dict(base, study=entry.study_index + 1,
                        family=entry.spec.family, reason=str(exc))
            return [], [], [skip]
        families.append(entry.spec.family)
        for text in hyp_texts:
            rec = bf.evaluate(fit, parsed[text], label=labels[text],
                              study_id=f"s{entry.study_index + 1}",
                              rng=mc_rng, draws=draws)
            records[text].append(rec)

    family_set = "+".join(dict.fromkeys(families))
    study_rows: list[dict] = []
    agg_rows: list[dict] = []
    for text in hyp_texts:
        recs = records[text]
        for alt in alternatives:
            per_study = []
            for rec in recs:
                v = rec.log_bf_iu if alt == "unconstrained" else rec.log_bf_ic
                if v is None:
                    raise bf.NumericError(
                        f"hypothesis {labels[text]!r} has no complement Bayes factor")
                per_study.append(v)
            agg = synthesis.aggregate_log_bf(per_study)
            agg_se = math.sqrt(sum(_log_bf_se(rec, alt) ** 2 for rec in recs))
            for rec, v in zip(recs, per_study):
                study_rows.append(dict(base, family=rec.family,
                                       study=int(rec.study_id[1:]),
                                       n=rec.n, hypothesis=labels[text],
                                       alternative=alt, fit=rec.fit,
                                       complexity=rec.complexity, log_bf=v,
                                       agg_log_bf=None, pmp=_sigmoid(v)))
            agg_rows.append(dict(base, family=family_set, study=None,
                                 hypothesis=labels[text], alternative=alt,
                                 fit=None, complexity=None, log_bf=None,
                                 agg_log_bf=agg, pmp=_sigmoid(agg),
                                 mc_se=agg_se))
    return study_rows, agg_rows, []


def run_simulation(config: SimulationConfig) -> SimulationResult:
    """Run every (condition, iteration) cell and collect ordered rows.

    Work is keyed by (seed, sim, condition, iteration, study) generator
    streams, so results do not depend on the execution schedule; rows are
    ordered by condition then iteration before returning.
    """
    conditions = [(ci, n, r2)
                  for ci, (n, r2) in enumerate((n, r2) for n in config.ns
                                               for r2 in config.r2s)]
    tasks = [(config.sim_id, ci, n, r2, it, config.seed, config.draws,
              config.alternatives, config.n_studies, config.decomposed)
             for ci, n, r2 in conditions
             for it in range(config.iterations)]
    if config.threads > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            outputs = list(pool.map(_run_iteration_star, tasks, chunksize=1))
    else:
        outputs = [run_iteration(*task) for task in tasks]

    rows: list[dict] = []
    aggregates: list[dict] = []
    skips: list[dict] = []
    for study_rows, agg_rows, skipped in outputs:
        rows.extend(study_rows)
        rows.extend({k: v for k, v in row.items() if k != "mc_se"}
                    for row in agg_rows)
        aggregates.extend(agg_rows)
        skips.extend(skipped)
    _check_aggregates(rows)
    return SimulationResult(RESULT_COLUMNS, rows, aggregates, skips)


def _run_iteration_star(task):
    return run_iteration(*task)


def _check_aggregates(rows: list[dict]):
    # every aggregate row must equal the sum of its per-study rows
    sums: dict[tuple, list[float]] = {}
    for row in rows:
        if row.get("study") is not None:
            key = (row["_cond"], row["iteration"],
                   row["hypothesis"], row["alternative"])
            sums.setdefault(key, []).append(row["log_bf"])
    for row in rows:
        if row.get("study") is None:
            key = (row["_cond"], row["iteration"],
                   row["hypothesis"], row["alternative"])
            expected = synthesis.aggregate_log_bf(sums.get(key, ()))
            got = row["agg_log_bf"]
            if expected != got and abs(expected - got) > 1e-9:
                raise bf.NumericError(
                    f"aggregate cross-check failed for {key}: "
                    f"{got!r} vs sum {expected!r}")


def write_results_csv(result: SimulationResult, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv_writer(fh)
        w.writerow(result.columns)
        for row in result.rows:
            w.writerow(tuple(_fmt(row.get(col)) for col in result.columns))


def cmd_simulate(args) -> int:
    sequential = args.sim in simgen.SEQUENTIAL_SIMS
    if args.n:
        ns = tuple(int(x) for x in args.n.split(","))
    else:
        ns = simgen.SEQUENTIAL_N_GRID if sequential else simgen.N_GRID
    if args.r2:
        r2s = tuple(float(x) for x in args.r2.split(","))
    else:
        r2s = (simgen.SEQUENTIAL_R2,) if sequential else simgen.R2_GRID
    if args.alternative == "both":
        alternatives = ("unconstrained", "complement")
    else:
        alternatives = (args.alternative,)
    config = SimulationConfig(sim_id=args.sim, iterations=args.iters, ns=ns,
                              r2s=r2s, seed=args.seed, draws=args.mc_draws,
                              alternatives=alternatives,
                              n_studies=args.studies,
                              decomposed=args.decomposed,
                              threads=args.threads)
    result = run_simulation(config)
    write_results_csv(result, args.out)
    if result.skips:
        sidecar = Path(str(args.out) + ".skips.json")
        sidecar.write_text(json.dumps(_json_safe(result.skips), sort_keys=True,
                                      indent=2) + "\n", encoding="utf-8")
        for skip in result.skips:
            print(f"skipped: sim {skip['sim_id']} n={skip['n']} r2={skip['r2']} "
                  f"iteration {skip['iteration']}: {skip['reason']}",
                  file=sys.stderr)
    n_agg = sum(1 for row in result.rows if row.get("study") is None)
    print(f"wrote {len(result.rows)} rows ({n_agg} aggregates) to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report

def cmd_report(args) -> int:
    with open(args.input, newline="", encoding="utf-8") as fh:
        reader = DictReader(fh)
        missing = [c for c in RESULT_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise glm.DataError(f"{args.input}: missing columns {missing}")
        groups: dict[tuple, dict] = {}
        for row in reader:
            if row["study"] != "":
                continue
            key = (row["sim_id"], row["family"], row["n"], row["r2"],
                   row["hypothesis"], row["alternative"])
            entry = groups.setdefault(key, {"log_bf": [], "pmp": []})
            entry["log_bf"].append(_parse_float(row["agg_log_bf"]))
            entry["pmp"].append(_parse_float(row["pmp"]))
    if not groups:
        raise glm.DataError(f"{args.input}: no aggregate rows found")
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv_writer(fh)
        w.writerow(REPORT_COLUMNS)
        for key in sorted(groups):
            vals = np.array(groups[key]["log_bf"])
            q = np.quantile(vals, (0.0, 0.25, 0.5, 0.75, 1.0))
            mean_pmp = float(np.mean(groups[key]["pmp"]))
            w.writerow(tuple(key) + (str(len(vals)),)
                       + tuple(_fmt(float(v)) for v in q) + (_fmt(mean_pmp),))
    print(f"wrote {len(groups)} condition summaries to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

def _fraction_arg(text: str):
    if text == "auto":
        return "auto"
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected 'auto' or a number in (0, 1)")
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError("fraction must lie in (0, 1)")
    return value


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evsynth",
        description="Constrained-hypothesis evidence and cross-study synthesis")
    sub = parser.add_subparsers(dest="command", metavar="command")

    pa = sub.add_parser("analyze", help="evaluate a hypothesis on a CSV dataset")
    pa.add_argument("--data", required=True, help="input CSV with a header row")
    pa.add_argument("--family", required=True,
                    choices=("gaussian", "logit", "probit"))
    pa.add_argument("--outcome", required=True, help="outcome column name")
    pa.add_argument("--predictors",
                    help="comma-separated predictor columns (default: all others)")
    pa.add_argument("--hypothesis", required=True,
                    help="constraint string, e.g. 'x4 < x5 < x6'")
    pa.add_argument("--alternative", default="unconstrained",
                    choices=("unconstrained", "complement"))
    pa.add_argument("--mc-draws", type=int, default=bf.DEFAULT_DRAWS)
    pa.add_argument("--fraction", type=_fraction_arg, default="auto",
                    help="'auto' (family rule) or an explicit fraction in (0, 1)")
    pa.add_argument("--seed", type=_nonneg_int, required=True)
    pa.add_argument("--out", required=True, help="output JSON path")
    pa.add_argument("--no-intercept", action="store_true",
                    help="do not prepend an intercept column")
    pa.add_argument("--study-id", help="study label (default: data file stem)")
    pa.set_defaults(func=cmd_analyze)

    ps = sub.add_parser("synthesize", help="aggregate evidence records")
    ps.add_argument("--records", required=True, nargs="+",
                    help="record JSON files and/or directories of them")
    ps.add_argument("--priors", default="uniform",
                    help="'uniform' or comma-separated prior probabilities "
                         "(hypotheses first, alternative last)")
    ps.add_argument("--out", required=True, help="output summary JSON path")
    ps.add_argument("--trail", help="optional per-study trail CSV path")
    ps.set_defaults(func=cmd_synthesize)

    pm = sub.add_parser("simulate", help="run a bundled simulation study")
    pm.add_argument("--sim", type=int, required=True, choices=range(1, 12),
                    metavar="1..11")
    pm.add_argument("--iters", type=int, default=1000)
    pm.add_argument("--n", help="comma-separated sample sizes (default: the "
                                "simulation's grid)")
    pm.add_argument("--r2", help="comma-separated target R^2 values")
    pm.add_argument("--alternative", default="both",
                    choices=("unconstrained", "complement", "both"))
    pm.add_argument("--mc-draws", type=int, default=bf.DEFAULT_DRAWS)
    pm.add_argument("--studies", type=int,
                    help="study count per iteration (simulations 9-11)")
    pm.add_argument("--decomposed", action="store_true",
                    help="simulation 11: evaluate the three single-coefficient "
                         "parts instead of the joint hypothesis")
    pm.add_argument("--seed", type=_nonneg_int, required=True)
    pm.add_argument("--threads", type=int, default=1,
                    help="worker processes (results are identical for any value)")
    pm.add_argument("--out", required=True, help="output CSV path")
    pm.set_defaults(func=cmd_simulate)

    pr = sub.add_parser("report", help="summarize a simulation results CSV")
    pr.add_argument("--in", dest="input", required=True)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help()
        return EXIT_PARSE
    try:
        return args.func(args)
    except (hyp.ParseError, hyp.NameMappingError,
            hyp.EqualityComplementUnsupportedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (glm.GlmError, simgen.PersistentSeparationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (bf.NumericError, synthesis.LabelMismatchError,
            synthesis.DuplicateStudyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
