"""Command-line entry point for reproducible attribution runs.

Commands: extract (corpus -> feature CSV), cv (cross-validated
classification), fit (full-data model + diagnostics), report (re-render a
stored model), compare (agreement between two CV runs).  Every command
writes the resolved run configuration next to its outputs so a run can be
reproduced byte-for-byte from its output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import __version__
from .evaluation import (
    CVConfig,
    CVResult,
    CutoffPolicy,
    FeatureScope,
    Scheme,
    compare_runs,
    fit_full_model,
    run_cv,
    selection_stability,
    write_fold_csv,
    write_probability_csv,
    write_stability_csv,
)
from .features import (
    FeatureMatrix,
    build_development_pool,
    extract_all,
    THRESHOLD_READINGS,
)
from .glm import PriorConfig
from .score import load_corpus, movement_to_json
from .segments import DEFAULT_SEGMENT_LENGTHS, SegmentConfig

logger = logging.getLogger(__name__)

SEED_ENV = "QUARTET_ATTRIB_SEED"

#: Per-dataset policies for one-command reproduction runs.
PRESETS = {
    "hm285": {"xi": 0.6, "scheme": "loo", "cutoff": "tuned", "scope": "full", "filter": "global"},
    "hm107": {"xi": 0.6, "scheme": "loo", "cutoff": "fixed", "scope": "full", "filter": "global"},
}


def _resolve(args, key, fallback):
    value = getattr(args, key, None)
    if value is not None:
        return value
    preset = PRESETS.get(getattr(args, "preset", None) or "", {})
    if key in preset:
        return preset[key]
    return fallback


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    return int(env) if env else 0


def _parse_lengths(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.split(",") if tok.strip())


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_corpus_or_die(args):
    corpus_root = Path(args.corpus)
    if not corpus_root.is_dir():
        raise SystemExit(f"error: corpus root {corpus_root} is not a directory")
    movements, errors = load_corpus(corpus_root, args.manifest, skip_bad=args.skip_bad)
    for path, msg in errors:
        print(f"error parsing {path}: {msg}", file=sys.stderr)
    if errors and not args.skip_bad:
        raise SystemExit(1)
    if not movements:
        raise SystemExit("error: no movements found")
    return movements


def _run_config(args, command: str, extra: dict) -> dict:
    cfg = {"command": command, "version": __version__}
    cfg.update(extra)
    return cfg


def cmd_extract(args) -> int:
    movements = _load_corpus_or_die(args)
    lengths = _parse_lengths(args.m_lengths)
    config = SegmentConfig(lengths=lengths)
    out = _out_dir(args)

    pool = build_development_pool(movements, config)
    thresholds = pool.thresholds(reading=args.threshold_reading)
    matrix = extract_all(
        movements, config, thresholds=thresholds, threshold_reading=args.threshold_reading
    )
    matrix.to_csv(out / "features.csv", out / "movement_meta.csv")
    _write_json(out / "thresholds.json", thresholds.to_json())
    if args.dump_movements:
        dump_dir = out / "movements"
        dump_dir.mkdir(exist_ok=True)
        for i, mv in enumerate(movements):
            name = Path(mv.meta.source_path).name or f"movement{i}"
            _write_json(dump_dir / f"{name}.json", movement_to_json(mv))
    _write_json(
        out / "run_config.json",
        _run_config(
            args,
            "extract",
            {
                "corpus": str(args.corpus),
                "manifest": str(args.manifest),
                "m_lengths": list(lengths),
                "threshold_reading": args.threshold_reading,
                "skip_bad": args.skip_bad,
            },
        ),
    )
    print(f"extracted {matrix.n} movements x {matrix.p} features -> {out / 'features.csv'}")
    return 0


def _matrix_from_args(args) -> FeatureMatrix:
    if args.features:
        if not args.meta:
            raise SystemExit("error: --meta is required with --features")
        return FeatureMatrix.from_csv(args.features, args.meta)
    if args.corpus and args.manifest:
        movements = _load_corpus_or_die(args)
        lengths = _parse_lengths(args.m_lengths)
        return extract_all(
            movements,
            SegmentConfig(lengths=lengths),
            threshold_reading=args.threshold_reading,
        )
    raise SystemExit("error: provide --features/--meta or --corpus/--manifest")


def _cv_config(args) -> CVConfig:
    return CVConfig(
        scheme=Scheme(_resolve(args, "scheme", "loo")),
        cutoff_policy=CutoffPolicy(_resolve(args, "cutoff", "fixed")),
        feature_scope=FeatureScope(_resolve(args, "scope", "full")),
        prior=PriorConfig(scale_factor=_resolve(args, "xi", 0.6)),
        seed=_resolve_seed(args),
        restarts=args.restarts,
        filter_mode=_resolve(args, "filter", "per-fold"),
        bic_form=args.bic,
        leakage_audit=args.leakage_audit,
        n_jobs=args.jobs,
    )


def _percent(x: float) -> str:
    return "nan" if math.isnan(x) else f"{100.0 * x:.2f}%"


def _print_cv_summary(result: CVResult) -> None:
    print(f"scheme: {result.scheme}  movements: {result.n}  folds: {len(result.folds)}")
    print(f"accuracy: {_percent(result.accuracy)}")
    print(
        f"per-class accuracy: Haydn {_percent(result.class_accuracy(1))}, "
        f"Mozart {_percent(result.class_accuracy(0))}"
    )
    cm = result.confusion
    print("confusion matrix (rows observed, columns predicted; Mozart, Haydn):")
    print(f"  observed Mozart: {cm[0][0]:4d} {cm[0][1]:4d}")
    print(f"  observed Haydn:  {cm[1][0]:4d} {cm[1][1]:4d}")
    failed = [f.fold_id for f in result.folds if f.failed]
    if failed:
        print(f"failed folds ({len(failed)}): {', '.join(failed)}")


def cmd_cv(args) -> int:
    config = _cv_config(args)
    pool = None
    if config.leakage_audit:
        if not (args.corpus and args.manifest):
            raise SystemExit("error: --leakage-audit needs --corpus/--manifest")
        movements = _load_corpus_or_die(args)
        seg = SegmentConfig(_parse_lengths(args.m_lengths))
        pool = build_development_pool(movements, seg)
        if args.features:
            matrix = FeatureMatrix.from_csv(args.features, args.meta)
        else:
            matrix = extract_all(
                movements,
                seg,
                thresholds=pool.thresholds(reading=args.threshold_reading),
            )
    else:
        matrix = _matrix_from_args(args)
    result = run_cv(
        matrix, config, development_pool=pool, threshold_reading=args.threshold_reading
    )
    out = _out_dir(args)
    _write_json(out / "cv_result.json", result.to_json())
    write_fold_csv(result, out / "folds.csv")
    write_probability_csv(result, out / "probabilities.csv")
    write_stability_csv(selection_stability(result), out / "stability.csv")
    _write_json(
        out / "run_config.json",
        _run_config(args, "cv", {"cv": config.to_json(), "features": str(args.features or "")}),
    )
    _print_cv_summary(result)
    return 0


def render_report(payload: dict) -> str:
    """Human-readable coefficient table and goodness-of-fit sweep."""
    lines = []
    lines.append(f"Composer model on {payload['n']} movements")
    lines.append(f"selected features: {len(payload['selection']['selected'])}  "
                 f"BIC: {payload['selection']['bic']:.6g}")
    lines.append("")
    lines.append(f"{'Category':<16}{'Feature':<58}{'Estimate':>12}{'Std.Err':>10}{'p-value':>12}")
    for row in payload["table"]:
        lines.append(
            f"{row['category']:<16}{row['feature']:<58}"
            f"{row['estimate']:>12.4g}{row['se']:>10.3g}{row['p_value']:>12.3g}"
        )
    lines.append("")
    hosmer = payload["hosmer"]
    if hosmer:
        gs = [h["g"] for h in hosmer]
        ps = [h["p_value"] for h in hosmer]
        lines.append(
            f"Hosmer-Lemeshow sweep g={min(gs)}..{max(gs)}: "
            f"median p = {payload['hosmer_median_p']:.4f}, min p = {min(ps):.4f}"
        )
    else:
        lines.append("Hosmer-Lemeshow sweep: no feasible group count")
    return "\n".join(lines) + "\n"


def cmd_fit(args) -> int:
    matrix = _matrix_from_args(args)
    config = _cv_config(args)
    report = fit_full_model(matrix, config)
    out = _out_dir(args)
    payload = report.to_json()
    _write_json(out / "model.json", payload)
    text = render_report(payload)
    (out / "report.txt").write_text(text, encoding="utf-8")
    _write_json(
        out / "run_config.json",
        _run_config(args, "fit", {"cv": config.to_json(), "features": str(args.features or "")}),
    )
    print(text, end="")
    return 0


def cmd_report(args) -> int:
    with open(args.model, encoding="utf-8") as fh:
        payload = json.load(fh)
    text = render_report(payload)
    if args.out:
        out = _out_dir(args)
        (out / "report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_compare(args) -> int:
    with open(args.run_a, encoding="utf-8") as fh:
        a = CVResult.from_json(json.load(fh))
    with open(args.run_b, encoding="utf-8") as fh:
        b = CVResult.from_json(json.load(fh))
    report = compare_runs(a, b)
    print(f"movements compared: {report.n}")
    print(
        "probability (a vs b): "
        f"less {report.prob_less_pct:.2f}%  equal {report.prob_equal_pct:.2f}%  "
        f"greater {report.prob_greater_pct:.2f}%"
    )
    print(
        "class (a vs b):       "
        f"less {report.class_less_pct:.2f}%  equal {report.class_equal_pct:.2f}%  "
        f"greater {report.class_greater_pct:.2f}%"
    )
    print(f"accuracy: a {_percent(report.accuracy_a)}  b {_percent(report.accuracy_b)}")
    if args.out:
        out = _out_dir(args)
        _write_json(out / "compare.json", report.to_json())
    return 0


def _add_matrix_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--features", help="feature CSV produced by extract")
    p.add_argument("--meta", help="movement metadata CSV produced by extract")
    p.add_argument("--corpus", help="corpus root with **kern files")
    p.add_argument("--manifest", help="corpus manifest CSV")
    p.add_argument("--m-lengths", default=",".join(str(m) for m in DEFAULT_SEGMENT_LENGTHS))
    p.add_argument("--threshold-reading", choices=THRESHOLD_READINGS, default="prose")
    p.add_argument("--skip-bad", action="store_true", help="skip unparseable movements")


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--xi", type=float, help="prior scale factor (default 0.6)")
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--seed", type=int, help=f"RNG seed (falls back to ${SEED_ENV}, then 0)")
    p.add_argument("--scope", choices=[s.value for s in FeatureScope])
    p.add_argument("--cutoff", choices=[c.value for c in CutoffPolicy])
    p.add_argument("--bic", choices=["paper", "textbook"], default="paper")
    p.add_argument("--filter", choices=["global", "per-fold"])
    p.add_argument("--leakage-audit", action="store_true",
                   help="recompute development thresholds per training fold")
    p.add_argument("--jobs", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quartet-attrib",
        description="Haydn/Mozart string-quartet attribution from **kern scores",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="parse a corpus and write the feature matrix")
    p.add_argument("--corpus", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--m-lengths", default=",".join(str(m) for m in DEFAULT_SEGMENT_LENGTHS))
    p.add_argument("--threshold-reading", choices=THRESHOLD_READINGS, default="prose")
    p.add_argument("--skip-bad", action="store_true")
    p.add_argument("--dump-movements", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("cv", help="cross-validated classification")
    _add_matrix_args(p)
    _add_model_args(p)
    p.add_argument("--scheme", choices=[s.value for s in Scheme])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("fit", help="fit the full-data model with diagnostics")
    _add_matrix_args(p)
    _add_model_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("report", help="re-render a stored model report")
    p.add_argument("--model", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("compare", help="agreement between two CV runs")
    p.add_argument("run_a")
    p.add_argument("run_b")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return 1
        return exc.code if exc.code is not None else 0
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
