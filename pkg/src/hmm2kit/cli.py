"""Command line pipeline: simulate, segment, train, recognize, evaluate.

Every subcommand is deterministic given its inputs and seed, writes its
artifacts atomically, and exits with a class-specific code:

    0  success
    2  usage or configuration problems
    3  I/O problems (missing or unreadable paths)
    4  validation problems (malformed or inconsistent content)
    5  numeric or decoding failures

HMM2KIT_LOG sets the log level (debug, info, warning, error).  Defaults
can also come from a JSON config file via --config; explicit flags win
over the config file, which wins over built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import corpus as corpus_mod
from . import evaluation, grammar as grammar_mod, kernels, model as model_mod, training
from .exceptions import (
    DataFormatError,
    DecodeFailureError,
    GrammarError,
    Hmm2KitError,
    ModelFormatError,
    NumericError,
    ValidationError,
)
from .fileio import write_json_atomic, write_text_atomic

log = logging.getLogger(__name__)

LOG_ENV_VAR = "HMM2KIT_LOG"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_VALIDATION = 4
EXIT_NUMERIC = 5

ORDER_FLAG_TO_MODE = {1: "first_order", 2: "second_order"}


def _configure_logging() -> None:
    wanted = os.environ.get(LOG_ENV_VAR, "warning").strip().lower()
    level = {
        "debug": logging.DEBUG,
        "info": logging.INFO,
        "warning": logging.WARNING,
        "error": logging.ERROR,
    }.get(wanted)
    if level is None:
        level = logging.WARNING
    logging.basicConfig(
        level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )
    if wanted and level == logging.WARNING and wanted != "warning":
        log.warning("unknown %s value %r, using warning", LOG_ENV_VAR, wanted)


def _load_config_file(path):
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataFormatError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise DataFormatError(f"config {path} must hold a JSON object")
    return doc


def _setting(args, config, key, default):
    """Flag value if given, else config file value, else default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _parse_sensors(value):
    if value is None:
        return None
    names = [part.strip() for part in value.split(",") if part.strip()]
    if not names:
        raise ValidationError("--sensors was given but names no channels")
    return names


def _prepare_sequence(seq, sensors, derivative):
    if sensors is not None:
        seq = corpus_mod.select_channels(seq, sensors)
    if derivative:
        seq = corpus_mod.first_derivative(seq)
    return seq


def cmd_simulate(args) -> int:
    config = _load_config_file(args.config)
    count = int(_setting(args, config, "count", 1))
    if count < 0:
        raise ValidationError("--count must be nonnegative")
    scenario = corpus_mod.load_scenario(args.scenario)
    out_dir = Path(args.out)
    runs = [
        corpus_mod.synthesize_run(scenario, args.seed + offset)
        for offset in range(count)
    ]
    corpus_mod.save_runs(runs, out_dir)
    manifest = {
        "scenario": scenario.name,
        "seed": args.seed,
        "count": count,
        "run_ids": [run.run_id for run in runs],
    }
    write_json_atomic(out_dir / "manifest.json", manifest)
    log.info("wrote %d runs under %s", count, out_dir)
    return EXIT_OK


def cmd_segment(args) -> int:
    rules = corpus_mod.load_rules(args.rules)
    sequences = corpus_mod.load_sequences(args.runs)
    labeled = [
        corpus_mod.segment_run(seq, rules, args.default_label, run_id=run_id)
        for run_id, seq in sorted(sequences.items())
    ]
    corpus_mod.write_labels(labeled, args.out)
    log.info("labeled %d runs into %s", len(labeled), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_config_file(args.config)
    states = int(_setting(args, config, "states", 3))
    mixtures = int(_setting(args, config, "mixtures", 1))
    order = int(_setting(args, config, "order", 2))
    if order not in ORDER_FLAG_TO_MODE:
        raise ValidationError("--order must be 1 or 2")
    train_config = training.TrainingConfig(
        max_iterations=int(
            _setting(args, config, "iterations", training.DEFAULT_MAX_ITERATIONS)
        ),
        rel_ll_tolerance=float(
            _setting(args, config, "tolerance", training.DEFAULT_REL_LL_TOLERANCE)
        ),
        order_mode=ORDER_FLAG_TO_MODE[order],
        variance_floor=float(
            _setting(args, config, "variance_floor", model_mod.DEFAULT_VARIANCE_FLOOR)
        ),
        min_count=float(_setting(args, config, "min_count", training.DEFAULT_MIN_COUNT)),
    )
    sensors = _parse_sensors(_setting(args, config, "sensors", None))
    runs = corpus_mod.load_runs(args.runs, args.labels)
    if sensors is not None:
        runs = [
            corpus_mod.LabeledRun(
                run_id=r.run_id,
                seq=corpus_mod.select_channels(r.seq, sensors),
                segments=r.segments,
                provenance=r.provenance,
                scenario_seed=r.scenario_seed,
            )
            for r in runs
        ]
    corpora, excluded = corpus_mod.build_corpora(runs)
    feature_corpus = corpora.get(args.feature)
    if not feature_corpus:
        raise ValidationError(
            f"no usable segments labeled {args.feature!r} in {args.runs} "
            f"({excluded} short segments were excluded)"
        )
    if args.derivative:
        feature_corpus = [
            corpus_mod.first_derivative(seq)
            for seq in feature_corpus
            if seq.num_frames >= 4
        ]
        if not feature_corpus:
            raise ValidationError(
                f"all {args.feature!r} segments are too short for --derivative"
            )
    initial = training.initialize_from_segments(
        states,
        feature_corpus,
        num_mixtures=mixtures,
        variance_floor=train_config.variance_floor,
    )
    trained, train_report = training.train_with_report(
        initial, feature_corpus, train_config
    )
    model_mod.save_model(trained, args.out)
    if args.report:
        write_json_atomic(args.report, train_report.to_doc())
    log.info(
        "trained %r on %d segments, final log-likelihood %.3f",
        args.feature,
        len(feature_corpus),
        train_report.ll_trace[-1],
    )
    return EXIT_OK


def _load_grammar_models(grammar_path, models_dir):
    text = Path(grammar_path).read_text(encoding="utf-8")
    parsed = grammar_mod.parse_grammar(text)
    models_dir = Path(models_dir)
    paths = {}
    for name, ref in parsed.nodes.items():
        path = models_dir / (ref if ref else f"{name}.json")
        if not path.is_file():
            raise GrammarError(f"grammar node {name!r} needs missing model file {path}")
        paths[name] = path
    models = {name: model_mod.load_model(path) for name, path in paths.items()}
    return parsed, models


def cmd_recognize(args) -> int:
    config = _load_config_file(args.config)
    sensors = _parse_sensors(_setting(args, config, "sensors", None))
    exit_self_loop = float(
        _setting(args, config, "exit_self_loop", grammar_mod.DEFAULT_EXIT_SELF_LOOP)
    )
    parsed, models = _load_grammar_models(args.grammar, args.models)
    composite = grammar_mod.compose(parsed, models, exit_self_loop)
    sequences = corpus_mod.load_sequences(args.runs)
    records = []
    failures = 0
    for run_id, seq in sorted(sequences.items()):
        seq = _prepare_sequence(seq, sensors, args.derivative)
        try:
            decoded = grammar_mod.decode_run(composite, seq)
        except (DecodeFailureError, NumericError) as exc:
            log.error("run %s failed to decode: %s", run_id, exc)
            records.append({"run_id": run_id, "error": str(exc)})
            failures += 1
            continue
        records.append(
            {
                "run_id": run_id,
                "segments": [
                    {"label": s.label, "start": s.start, "end": s.end}
                    for s in decoded.segments
                ],
                "log_joint": decoded.log_joint,
            }
        )
    lines = [json.dumps(record, ensure_ascii=False) for record in records]
    write_text_atomic(args.out, "\n".join(lines) + "\n" if lines else "")
    log.info("decoded %d runs (%d failures) into %s", len(records), failures, args.out)
    return EXIT_NUMERIC if failures else EXIT_OK


def _read_hypotheses(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot read hypothesis file {path}: {exc}") from exc
    hypotheses = {}
    failed = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            run_id = record["run_id"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataFormatError(f"{path}: line {lineno}: {exc}") from exc
        if "error" in record:
            failed.append(run_id)
            continue
        try:
            segments = tuple(
                grammar_mod.Segment(str(s["label"]), int(s["start"]), int(s["end"]))
                for s in record["segments"]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"{path}: line {lineno}: {exc}") from exc
        hypotheses[run_id] = segments
    return hypotheses, failed


def cmd_evaluate(args) -> int:
    config = _load_config_file(args.config)
    overlap = float(
        _setting(args, config, "overlap", evaluation.DEFAULT_OVERLAP_THRESHOLD)
    )
    references = corpus_mod.read_labels(args.labels)
    hypotheses, failed = _read_hypotheses(args.hypothesis)
    missing = [rid for rid, _ in references if rid not in hypotheses]
    missing.extend(rid for rid in failed if any(r == rid for r, _ in references))
    if missing:
        raise ValidationError(
            "hypotheses missing for run ids: " + ", ".join(sorted(set(missing)))
        )
    alignments = []
    for run_id, ref_segments in references:
        reference = grammar_mod.FeatureSequence(segments=ref_segments, log_joint=0.0)
        hypothesis = grammar_mod.FeatureSequence(
            segments=hypotheses[run_id], log_joint=0.0
        )
        alignments.append(
            evaluation.align(reference, hypothesis, args.default_label, overlap)
        )
    result = evaluation.report(alignments)
    text = result.render_text()
    write_json_atomic(f"{args.out}.json", result.to_doc())
    write_text_atomic(f"{args.out}.txt", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_inspect(args) -> int:
    if args.defaults:
        lines = [
            f"backend: {kernels.active_backend()} "
            f"(available: {', '.join(kernels.available_backends())})",
            f"model_format_version: {model_mod.MODEL_FORMAT_VERSION}",
            f"variance_floor: {model_mod.DEFAULT_VARIANCE_FLOOR}",
            f"min_count: {training.DEFAULT_MIN_COUNT}",
            f"max_iterations: {training.DEFAULT_MAX_ITERATIONS}",
            f"rel_ll_tolerance: {training.DEFAULT_REL_LL_TOLERANCE}",
            f"order_mode: second_order",
            f"exit_self_loop: {grammar_mod.DEFAULT_EXIT_SELF_LOOP}",
            f"overlap_threshold: {evaluation.DEFAULT_OVERLAP_THRESHOLD}",
            f"log_env_var: {LOG_ENV_VAR} (debug, info, warning, error)",
            f"backend_env_var: {kernels.BACKEND_ENV_VAR} (numba, numpy)",
        ]
        print("\n".join(lines))
        return EXIT_OK
    loaded = model_mod.load_model(args.model)
    finals = ", ".join(str(s) for s in loaded.final_states)
    mask = loaded.topology_mask
    lines = [
        f"model: {args.model}",
        f"states: {loaded.num_states}",
        f"obs_dim: {loaded.obs_dim}",
        f"mixtures_per_state: {loaded.num_mixtures}",
        f"final_states: {finals}",
        f"allowed_transitions: {int(mask.sum())} of {mask.size}",
    ]
    for state, mixture in enumerate(loaded.emissions):
        mean = ", ".join(f"{v:.4g}" for v in mixture.components[0].mean)
        lines.append(f"state {state}: mean[0] = ({mean})")
    print("\n".join(lines))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hmm2kit",
        description="Train and run second-order HMM recognizers over sensor runs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="fabricate labeled runs from a scenario")
    p.add_argument("--scenario", required=True, help="scenario JSON path")
    p.add_argument("--count", type=int, default=None, help="number of runs")
    p.add_argument("--seed", type=int, required=True, help="base RNG seed")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--config", default=None, help="JSON config file")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("segment", help="label raw runs with threshold rules")
    p.add_argument("--runs", required=True, help="dataset directory")
    p.add_argument("--rules", required=True, help="segmentation rules JSON")
    p.add_argument("--default-label", required=True, help="filler label")
    p.add_argument("--out", required=True, help="labels JSONL to write")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("train", help="train one feature model from labeled runs")
    p.add_argument("--runs", required=True, help="dataset directory")
    p.add_argument("--labels", default=None, help="labels JSONL (default: in dataset)")
    p.add_argument("--feature", required=True, help="feature label to train")
    p.add_argument("--states", type=int, default=None, help="states per model")
    p.add_argument("--mixtures", type=int, default=None, help="Gaussians per state")
    p.add_argument("--order", type=int, choices=(1, 2), default=None,
                   help="transition normalization order")
    p.add_argument("--iterations", type=int, default=None, help="max EM iterations")
    p.add_argument("--tolerance", type=float, default=None,
                   help="relative log-likelihood stop tolerance")
    p.add_argument("--variance-floor", dest="variance_floor", type=float, default=None)
    p.add_argument("--min-count", dest="min_count", type=float, default=None)
    p.add_argument("--sensors", default=None, help="comma-separated channel names")
    p.add_argument("--derivative", action="store_true",
                   help="train on frame-to-frame differences")
    p.add_argument("--out", required=True, help="model JSON to write")
    p.add_argument("--report", default=None, help="training report JSON to write")
    p.add_argument("--config", default=None, help="JSON config file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("recognize", help="decode runs into feature segments")
    p.add_argument("--models", required=True, help="directory of model files")
    p.add_argument("--grammar", required=True, help="grammar document")
    p.add_argument("--runs", required=True, help="dataset directory")
    p.add_argument("--sensors", default=None, help="comma-separated channel names")
    p.add_argument("--derivative", action="store_true",
                   help="decode frame-to-frame differences")
    p.add_argument("--exit-self-loop", dest="exit_self_loop", type=float, default=None,
                   help="mass kept on a block's exit state")
    p.add_argument("--out", required=True, help="hypothesis JSONL to write")
    p.add_argument("--config", default=None, help="JSON config file")
    p.set_defaults(func=cmd_recognize)

    p = sub.add_parser("evaluate", help="score hypotheses against references")
    p.add_argument("--labels", required=True, help="reference labels JSONL")
    p.add_argument("--hypothesis", required=True, help="hypothesis JSONL")
    p.add_argument("--default-label", required=True, help="filler label to ignore")
    p.add_argument("--overlap", type=float, default=None,
                   help="match threshold as fraction of reference length")
    p.add_argument("--out", required=True, help="report path prefix")
    p.add_argument("--config", default=None, help="JSON config file")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect", help="describe a model file or the defaults")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model", help="model JSON to describe")
    group.add_argument("--defaults", action="store_true", help="print all defaults")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DecodeFailureError, NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Hmm2KitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc.__cause__, OSError):
            return EXIT_IO
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
