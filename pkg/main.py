import argparse
import json
import logging
import sys
from pathlib import Path

from dotenv import load_dotenv

from src import config
from src.classifier import (dataset_hash, fit_validated, load_model, save_model, trainer_for)
from src.datagen import generate, level_counts, load_dataset, save_dataset
from src.errors import ConfigError, FcucError, SolverError
from src.evaluation import compare, evaluate, load_report, save_report
from src.fcuc import ANALYTICAL, BASE, ML, NadirVariant, build, load_schedule, save_schedule
from src.island import load_island, load_params, load_series
from src.labeler import feature_correlation, label_balance, label_dataset, load_labeled, save_labeled
from src.manifest import RunManifest
from src.mps import write_mps
from src.oracle import oracle_solve
from src.solver import SolverConfig, solve

logger = logging.getLogger("fcuc")

VARIANTS = (BASE, ML, ANALYTICAL)


# ---------- shared loaders ----------
def _island(args, manifest: RunManifest):
    if not args.island:
        raise ConfigError("--island is required")
    specs, params = load_island(args.island)
    manifest.add_config(args.island)
    if args.params:
        params = load_params(args.params, params)
        manifest.add_config(args.params)
    return specs, params


def _series(args, manifest: RunManifest):
    if not args.series:
        raise ConfigError("--series is required")
    series = load_series(args.series)
    manifest.add_input(args.series)
    return series


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _input(args, attr: str, default_name: str) -> Path:
    path = Path(getattr(args, attr, None) or Path(args.out) / default_name)
    if not path.exists():
        raise ConfigError(f"input file not found: {path} (pass --{attr.replace('_', '-')})")
    return path


def _variant(tag: str, args, manifest: RunManifest) -> NadirVariant:
    if tag == ML:
        model_path = _input(args, "model", "model.json")
        manifest.add_input(model_path)
        return NadirVariant.ml(load_model(model_path))
    if tag == ANALYTICAL:
        return NadirVariant.analytical(breakpoints=args.breakpoints)
    return NadirVariant.base()


# ---------- subcommands ----------
def cmd_datagen(args, manifest: RunManifest) -> None:
    specs, params = _island(args, manifest)
    points = generate(specs, params, jobs=args.jobs)
    path = _out(args) / "dataset.csv"
    save_dataset(points, specs, path)
    manifest.add_output(path)
    manifest.details["points"] = len(points)
    manifest.details["levels"] = len(level_counts(points, params.power_step))


def cmd_label(args, manifest: RunManifest) -> None:
    specs, params = _island(args, manifest)
    dataset = _input(args, "dataset", "dataset.csv")
    manifest.add_input(dataset)
    samples, skipped = label_dataset(load_dataset(dataset, specs, params), specs, params, jobs=args.jobs)
    path = _out(args) / "labeled.csv"
    save_labeled(samples, path)
    manifest.add_output(path)
    manifest.details.update(label_balance(samples))
    manifest.details["skipped_outages"] = skipped
    if len(samples) >= 2:
        manifest.details["correlation"] = feature_correlation(samples)


def cmd_train(args, manifest: RunManifest) -> None:
    labeled = _input(args, "labeled", "labeled.csv")
    manifest.add_input(labeled)
    samples = load_labeled(labeled)
    model, train_acc, hold_acc = fit_validated(samples, trainer_for(args.method, args.c),
                                               args.holdout, args.seed)
    model = model.with_accuracies(train_acc, hold_acc, seed=args.seed, dataset_hash=dataset_hash(labeled))
    path = _out(args) / "model.json"
    save_model(model, path)
    manifest.add_output(path)
    manifest.details.update(label_balance(samples))
    manifest.details.update(train_accuracy=train_acc, holdout_accuracy=hold_acc,
                            method=model.method, c_reg=None if args.method.upper() == "LR" else args.c,
                            train_seconds=round(model.train_seconds, 3))


def cmd_validate(args, manifest: RunManifest) -> None:
    model_path = _input(args, "model", "model.json")
    labeled = _input(args, "labeled", "labeled.csv")
    manifest.add_input(model_path)
    manifest.add_input(labeled)
    saved = load_model(model_path)
    samples = load_labeled(labeled)
    _, train_acc, hold_acc = fit_validated(samples, trainer_for(saved.method, saved.c_reg),
                                           args.holdout, args.seed)
    path = _out(args) / "validation.json"
    path.write_text(json.dumps({
        "method": saved.method,
        "seed": args.seed,
        "holdout_frac": args.holdout,
        "train_accuracy": train_acc,
        "holdout_accuracy": hold_acc,
        "saved_model_accuracy": saved.accuracy(samples),
    }, indent=2, sort_keys=True) + "\n")
    manifest.add_output(path)


def cmd_build(args, manifest: RunManifest) -> None:
    specs, params = _island(args, manifest)
    series = _series(args, manifest)
    model = build(specs, series, params, _variant(args.variant, args, manifest), args.horizon)
    path = _out(args) / f"model_{args.variant}.mps"
    write_mps(model, path)
    manifest.add_output(path)
    manifest.details.update(model.stats())


def _solve_variant(tag: str, specs, params, series, args, manifest: RunManifest) -> Path:
    model = build(specs, series, params, _variant(tag, args, manifest), args.horizon)
    if args.oracle:
        result = oracle_solve(specs, series, params, model.variant, model.horizon)
    else:
        result = solve(model, SolverConfig.from_env(args.solver_cmd))
    status, schedule = result.status, result.schedule
    manifest.details[f"{tag}_status"] = status
    if schedule is None:
        raise SolverError(f"{tag} model: solver status {status}, no schedule")
    path = _out(args) / f"schedule_{tag}.csv"
    save_schedule(schedule, path)
    manifest.add_output(path)
    manifest.details[f"{tag}_objective"] = schedule.objective
    return path


def cmd_solve(args, manifest: RunManifest) -> None:
    specs, params = _island(args, manifest)
    series = _series(args, manifest)
    _solve_variant(args.variant, specs, params, series, args, manifest)


def _evaluate_variant(tag: str, specs, params, series, args, manifest: RunManifest, schedule_path=None):
    schedule_path = Path(schedule_path or getattr(args, "schedule", None) or Path(args.out) / f"schedule_{tag}.csv")
    if not schedule_path.exists():
        raise ConfigError(f"schedule not found: {schedule_path}")
    manifest.add_input(schedule_path)
    report = evaluate(load_schedule(schedule_path), specs, series, params, jobs=args.jobs)
    for path in save_report(report, _out(args)):
        manifest.add_output(path)
    return report


def cmd_evaluate(args, manifest: RunManifest) -> None:
    specs, params = _island(args, manifest)
    series = _series(args, manifest)
    report = _evaluate_variant(args.variant, specs, params, series, args, manifest)
    manifest.details.update(report.summary())


def cmd_compare(args, manifest: RunManifest) -> None:
    out = _out(args)
    tags = args.variants.split(",") if args.variants else [t for t in VARIANTS if (out / f"summary_{t}.json").exists()]
    reports = [load_report(out, t) for t in tags]
    for path in compare(reports, out):
        manifest.add_output(path)
    manifest.details["variants"] = tags


def cmd_pipeline(args, manifest: RunManifest) -> None:
    specs, params = _island(args, manifest)
    series = _series(args, manifest)
    tags = [BASE] + ([args.variant] if args.variant != BASE else [])
    if args.all_variants:
        tags = list(VARIANTS)

    if ML in tags:
        cmd_datagen(args, manifest)
        cmd_label(args, manifest)
        cmd_train(args, manifest)
    reports = []
    for tag in tags:
        schedule_path = _solve_variant(tag, specs, params, series, args, manifest)
        reports.append(_evaluate_variant(tag, specs, params, series, args, manifest, schedule_path))
    for path in compare(reports, _out(args)):
        manifest.add_output(path)
    manifest.details["variants"] = tags


COMMANDS = {
    "datagen": cmd_datagen,
    "label": cmd_label,
    "train": cmd_train,
    "validate": cmd_validate,
    "build": cmd_build,
    "solve": cmd_solve,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fcuc", description="Frequency-constrained unit commitment lab")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--island", help=".island file (units and study parameters)")
    ap.add_argument("--series", help="hourly demand/RES CSV")
    ap.add_argument("--params", help="file of study.* overrides")
    ap.add_argument("--variant", choices=VARIANTS, default=BASE)
    ap.add_argument("--all-variants", action="store_true", help="pipeline: run base, ml and analytical")
    ap.add_argument("--model", help="classifier model file (default <out>/model.json)")
    ap.add_argument("--dataset", help="operating points CSV (default <out>/dataset.csv)")
    ap.add_argument("--labeled", help="labeled outages CSV (default <out>/labeled.csv)")
    ap.add_argument("--schedule", help="schedule CSV (default <out>/schedule_<variant>.csv)")
    ap.add_argument("--variants", help="compare: comma-separated variant list")
    ap.add_argument("--out", default="out")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--solver-cmd", help="solver command template (overrides FCUC_SOLVER_CMD)")
    ap.add_argument("--oracle", action="store_true", help="solve with the exhaustive oracle (tiny instances)")
    ap.add_argument("--jobs", type=int, default=None)
    ap.add_argument("--method", default="lr", help="lr or svm")
    ap.add_argument("--c", type=float, default=1.0, help="SVM regularization C")
    ap.add_argument("--holdout", type=float, default=0.3)
    ap.add_argument("--horizon", type=int, default=None, help="hours to schedule (default: whole series)")
    ap.add_argument("--breakpoints", type=int, default=10)
    ap.add_argument("--log-level", default=None)
    return ap


def main(argv=None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=(args.log_level or config.log_level()).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args.jobs = args.jobs or config.jobs()
    manifest = RunManifest(command=" ".join(["fcuc"] + list(argv if argv is not None else sys.argv[1:])),
                           seed=args.seed)
    try:
        COMMANDS[args.command](args, manifest)
        manifest.write(_out(args) / f"manifest_{args.command}.json")
    except FcucError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code
    except Exception:
        logger.exception(f"{args.command} failed unexpectedly")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
