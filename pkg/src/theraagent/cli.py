"""Command line entry point: run, grade, metrics, trajectory, corpus ingest.

Exit codes: 0 success, 1 some cases errored, 2 bad input or config.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import logging
import re
import statistics
import sys
from collections import defaultdict
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .backend import Backend, Script, ScriptedBackend, backend_from_config
from .core import LoopConfig, PatientCase, validate_batch
from .errors import TheraError, ValidationError
from .evalsuite import (
    PairwiseRecord,
    RubricCriterion,
    axis_scores,
    correlations,
    grade_rubric,
    lexical_scores,
    median_agreement,
    theme_scores,
    win_rates,
)
from .io import dumps, load_config, read_csv, read_jsonl, write_csv, write_json, write_jsonl
from .judge import load_exemplars
from .loop import run_batch
from .retrieval import GuidelineDoc, ingest, load_corpus

logger = logging.getLogger("theraagent")

EXIT_OK, EXIT_PARTIAL, EXIT_INPUT = 0, 1, 2

_CONFIG_KEYS = {"loop", "backend", "judge_backend", "grader_backend", "script",
                "corpus", "exemplars", "concurrency", "temperature"}


class InputError(Exception):
    """Bad CLI input; reported on stderr with exit code 2."""


def _header() -> dict[str, Any]:
    return {
        "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "version": __version__,
    }


def _safe_name(case_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", case_id)


def _resolve(base: Path | None, value: str | None) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() or base is None else base / p


def _backends(cfg: dict[str, Any], script_path: Path | None, role_key: str) -> tuple[Backend, Backend]:
    if script_path is not None:
        scripted = ScriptedBackend(Script.load(script_path))
        return scripted, scripted
    if role_key in cfg and "backend" not in cfg:
        other = backend_from_config(cfg[role_key])
        return other, other
    if "backend" not in cfg:
        raise InputError("no backend: pass --script or set 'backend' in the config")
    main = backend_from_config(cfg["backend"])
    other = backend_from_config(cfg[role_key]) if role_key in cfg else main
    return main, other


# ---------------------------------------------------------------- run

def _loop_config(cfg: dict[str, Any], args: argparse.Namespace) -> LoopConfig:
    loop = dict(cfg.get("loop") or {})
    if args.max_iters is not None and args.window is None:
        # A shorter run shrinks the default selection window with it.
        window = loop.get("output_window", LoopConfig.output_window)
        loop["output_window"] = min(window, args.max_iters)
    if args.max_iters is not None:
        loop["max_iterations"] = args.max_iters
    if args.window is not None:
        loop["output_window"] = args.window
    return LoopConfig.from_dict(loop).with_overrides(
        tau=args.tau,
        memory_policy=args.memory_policy,
        memory_n=args.memory_n,
        few_shot_count=args.few_shot,
        rag_in_planner=args.rag_planner,
        rag_in_judge=args.rag_judge,
        dimensions_enabled=args.dimensions,
        aggregate_mode=args.aggregate_mode,
    )


def cmd_run(args: argparse.Namespace) -> int:
    cfg_path = Path(args.config) if args.config else None
    cfg = load_config(cfg_path)
    unknown = set(cfg) - _CONFIG_KEYS
    if unknown:
        raise InputError(f"unknown config keys: {sorted(unknown)}")
    base = cfg_path.parent if cfg_path else None

    config = _loop_config(cfg, args)
    cases = validate_batch([PatientCase.from_dict(r) for r in read_jsonl(args.cases)])
    if not cases:
        raise InputError(f"{args.cases}: no cases")

    script = Path(args.script) if args.script else _resolve(base, cfg.get("script"))
    planner, judge = _backends(cfg, script, "judge_backend")
    corpus = Path(args.corpus) if args.corpus else _resolve(base, cfg.get("corpus"))
    index = load_corpus(corpus) if corpus else None
    ex_path = Path(args.exemplars) if args.exemplars else _resolve(base, cfg.get("exemplars"))
    exemplars = load_exemplars(ex_path) if ex_path else []
    concurrency = args.concurrency or int(cfg.get("concurrency", 1))
    temperature = float(cfg.get("temperature", 0.0))
    if (config.rag_in_planner or config.rag_in_judge) and index is None:
        logger.warning("RAG enabled but no corpus given; prompts carry no RAG context")

    results = run_batch(cases, config, planner, judge, index, exemplars, concurrency, temperature)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for res in results:
        write_jsonl(out / f"{_safe_name(res.case_id)}.jsonl", res.transcript_lines())
    n_errors = sum(r.stop_reason == "error" for r in results)
    write_json(out / "summary.json", {
        "header": _header(),
        "config": config.to_dict(),
        "cases": [r.summary() for r in results],
        "n_cases": len(results),
        "n_errors": n_errors,
    })
    for r in results:
        print(f"{r.case_id}\titerations={len(r.records)}\tselected={r.selected_iteration}\t"
              f"stop={r.stop_reason}\tcalls={r.ledger.calls}")
    return EXIT_PARTIAL if n_errors else EXIT_OK


# ---------------------------------------------------------------- grade

def cmd_grade(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    responses = read_jsonl(args.responses)
    rubrics: dict[str, list[RubricCriterion]] = defaultdict(list)
    for rec in read_jsonl(args.rubric):
        if "case_id" not in rec:
            raise InputError(f"{args.rubric}: rubric lines need a case_id")
        rubrics[str(rec["case_id"])].append(RubricCriterion.from_dict(rec))
    _, grader = _backends(cfg, Path(args.script) if args.script else None, "grader_backend")

    rows, themed, flagged_cases = [], [], []
    for rec in responses:
        try:
            case_id, text = str(rec["case_id"]), str(rec["response"])
        except KeyError as exc:
            raise InputError(f"{args.responses}: response record missing {exc}") from None
        criteria = rubrics.get(case_id, [])
        if not any(c.points > 0 for c in criteria):
            flagged_cases.append(case_id)
            rows.append({"case_id": case_id, "normalized": None, "flag": "empty_rubric"})
            continue
        grade = grade_rubric(text, criteria, grader, case_id, str(rec.get("conversation", "")))
        axes = axis_scores(grade, criteria)
        theme = next((c.theme for c in criteria if c.theme), None)
        themed.append((grade, theme))
        rows.append({
            "case_id": case_id,
            "normalized": grade.normalized,
            "earned": grade.earned,
            "max_points": grade.max_points,
            "flagged_criteria": sum(grade.flagged),
            "theme": theme,
            "axes": axes,
            "flag": "",
        })

    graded = [r for r in rows if r["normalized"] is not None]
    axis_names = sorted({a for r in graded for a in r["axes"]})
    axis_means = {a: statistics.fmean(r["axes"][a] for r in graded if a in r["axes"]) for a in axis_names}
    report = {
        "header": _header(),
        "cases": rows,
        "mean": statistics.fmean(r["normalized"] for r in graded) if graded else None,
        "axes": axis_means,
        "themes": theme_scores(themed),
        "n_graded": len(graded),
        "excluded": flagged_cases,
    }
    _emit(args.out, report, ["case_id", "normalized", "earned", "max_points", "flagged_criteria",
                              "theme", *axis_names, "flag"],
          [{**r, **r.get("axes", {})} for r in rows])
    print(f"graded {len(graded)} cases, mean {report['mean']}")
    return EXIT_OK


def _emit(out: str | None, report: dict[str, Any], columns: Sequence[str], rows: list[dict]) -> None:
    if out is None:
        print(dumps(report))
        return
    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_json(out_path.with_suffix(".json"), report)
    write_csv(out_path.with_suffix(".csv"), columns, rows)


# ---------------------------------------------------------------- metrics

def _texts(path: str) -> list[str]:
    out = []
    for rec in read_jsonl(path):
        if "text" not in rec:
            raise InputError(f"{path}: records need a 'text' field")
        out.append(str(rec["text"]))
    return out


def cmd_metrics(args: argparse.Namespace) -> int:
    if args.which == "lexical":
        if not (args.predictions and args.references):
            raise InputError("lexical metrics need --predictions and --references")
        preds, refs = _texts(args.predictions), _texts(args.references)
        if len(preds) != len(refs):
            raise InputError(f"misaligned inputs: {len(preds)} predictions vs {len(refs)} references")
        rows = [{"index": i, **lexical_scores(p, r)} for i, (p, r) in enumerate(zip(preds, refs))]
        cols = ["bleu", "rouge1", "rouge2", "rougeL"]
        means = {c: statistics.fmean(r[c] for r in rows) if rows else None for c in cols}
        _emit(args.out, {"rows": rows, "mean": means}, ["index", *cols], rows)
        return EXIT_OK

    if args.which == "agreement":
        if not args.scores:
            raise InputError("agreement metrics need --scores")
        by_case: dict[str, tuple[list[float], list[float]]] = defaultdict(lambda: ([], []))
        for n, row in enumerate(read_csv(args.scores), 2):
            try:
                xs, ys = by_case[row["case_id"]]
                x, y = row[args.x_col], row[args.y_col]
            except KeyError as exc:
                raise InputError(f"{args.scores}: missing column {exc}") from None
            if x in ("", None) or y in ("", None):
                raise InputError(f"{args.scores}:{n}: misaligned score columns")
            xs.append(float(x))
            ys.append(float(y))
        if not by_case:
            raise InputError(f"{args.scores}: no rows")
        rows = []
        for case_id, (xs, ys) in by_case.items():
            if len(xs) < 2:
                raise InputError(f"case {case_id}: need at least two scored outputs")
            rows.append({"case_id": case_id, "n": len(xs), **correlations(xs, ys)})
        median_row: dict[str, Any] = {"case_id": "median", "n": len(rows)}
        skipped: dict[str, int] = {}
        for stat in ("spearman", "pearson", "ccc"):
            try:
                med = median_agreement(r[stat] for r in rows)
                median_row[stat], skipped[stat] = med.value, med.skipped
            except TheraError:
                median_row[stat], skipped[stat] = None, len(rows)
        cols = ["case_id", "n", "spearman", "pearson", "ccc"]
        _emit(args.out, {"cases": rows, "median": median_row, "skipped": skipped},
              cols, rows + [median_row])
        return EXIT_OK

    if not args.pairwise:
        raise InputError("winrate needs --pairwise")
    try:
        records = [PairwiseRecord(r["case_id"], r["dimension"], r["verdict"]) for r in read_csv(args.pairwise)]
    except KeyError as exc:
        raise InputError(f"{args.pairwise}: missing column {exc}") from None
    rates = win_rates(records)
    rows = [{"dimension": d, "win": w.win, "tie": w.tie, "loss": w.loss, "n": w.n} for d, w in rates.items()]
    _emit(args.out, {"dimensions": rows}, ["dimension", "win", "tie", "loss", "n"], rows)
    return EXIT_OK


# ---------------------------------------------------------------- trajectory

def trajectory_rows(transcripts: Sequence[Path]) -> list[dict[str, Any]]:
    """Per-iteration mean score across cases, plus the running best of that mean."""
    per_iter: dict[int, list[float]] = defaultdict(list)
    for path in transcripts:
        for rec in read_jsonl(path):
            if rec.get("type") == "iteration":
                per_iter[int(rec["iteration"])].append(float(rec["report"]["aggregate"]))
    rows = []
    best = float("-inf")
    for k in sorted(per_iter):
        mean = statistics.fmean(per_iter[k])
        best = max(best, mean)
        rows.append({"iteration": k, "mean_score": mean, "n_cases": len(per_iter[k]), "running_best": best})
    return rows


def cmd_trajectory(args: argparse.Namespace) -> int:
    paths: list[Path] = []
    for p in map(Path, args.transcripts):
        if p.is_dir():
            paths.extend(sorted(q for q in p.glob("*.jsonl")))
        else:
            paths.append(p)
    if not paths:
        raise InputError("no transcripts given")
    rows = trajectory_rows(paths)
    if not rows:
        raise InputError("transcripts contain no iterations")
    cols = ["iteration", "mean_score", "n_cases", "running_best"]
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_csv(args.out, cols, rows)
    else:
        write_csv_stdout(cols, rows)
    return EXIT_OK


def write_csv_stdout(cols: Sequence[str], rows: list[dict[str, Any]]) -> None:
    print(",".join(cols))
    for r in rows:
        print(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in cols))


# ---------------------------------------------------------------- corpus

def cmd_corpus_ingest(args: argparse.Namespace) -> int:
    index = ingest([GuidelineDoc.from_dict(r) for r in read_jsonl(args.path)])
    out = Path(args.out) if args.out else Path(args.path).with_suffix(".index.json")
    index.save(out)
    print(f"indexed {len(index)} documents -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="theraagent", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the refinement loop over a case file")
    run.add_argument("cases", help="JSONL of patient cases")
    run.add_argument("--config", help="YAML run config")
    run.add_argument("--script", help="JSONL script for the deterministic backend")
    run.add_argument("--corpus", help="guideline JSONL or saved index JSON")
    run.add_argument("--exemplars", help="few-shot exemplar JSONL")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--tau", type=float)
    run.add_argument("--max-iters", type=int)
    run.add_argument("--window", type=int)
    run.add_argument("--memory-policy", choices=["none", "all", "nearest_n", "best_n"])
    run.add_argument("--memory-n", type=int)
    run.add_argument("--few-shot", type=int)
    run.add_argument("--rag-planner", action=argparse.BooleanOptionalAction, default=None)
    run.add_argument("--rag-judge", action=argparse.BooleanOptionalAction, default=None)
    run.add_argument("--dimensions", action=argparse.BooleanOptionalAction, default=None)
    run.add_argument("--aggregate-mode", choices=["recomputed", "model_reported"])
    run.add_argument("--concurrency", type=int)
    run.set_defaults(func=cmd_run)

    grade = sub.add_parser("grade", help="rubric-grade responses")
    grade.add_argument("responses", help="JSONL {case_id, response}")
    grade.add_argument("rubric", help="JSONL {case_id, criterion_text, points, axes, theme}")
    grade.add_argument("--config", help="YAML with grader_backend or backend")
    grade.add_argument("--script", help="JSONL script for a deterministic grader")
    grade.add_argument("--out", help="report path stem (.json and .csv written)")
    grade.set_defaults(func=cmd_grade)

    metrics = sub.add_parser("metrics", help="lexical, agreement or win-rate metrics")
    metrics.add_argument("which", choices=["lexical", "agreement", "winrate"])
    metrics.add_argument("--predictions")
    metrics.add_argument("--references")
    metrics.add_argument("--scores", help="CSV with case_id and two score columns")
    metrics.add_argument("--x-col", default="judge")
    metrics.add_argument("--y-col", default="reference")
    metrics.add_argument("--pairwise", help="CSV case_id,dimension,verdict")
    metrics.add_argument("--out", help="report path stem (.json and .csv written)")
    metrics.set_defaults(func=cmd_metrics)

    traj = sub.add_parser("trajectory", help="per-iteration mean score across transcripts")
    traj.add_argument("transcripts", nargs="*", help="transcript JSONL files or directories")
    traj.add_argument("--out", help="CSV path (stdout if omitted)")
    traj.set_defaults(func=cmd_trajectory)

    corpus = sub.add_parser("corpus", help="guideline corpus tools")
    corpus_sub = corpus.add_subparsers(dest="corpus_command", required=True)
    ing = corpus_sub.add_parser("ingest", help="build a BM25 index file from a corpus JSONL")
    ing.add_argument("path")
    ing.add_argument("--out")
    ing.set_defaults(func=cmd_corpus_ingest)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, ValidationError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
