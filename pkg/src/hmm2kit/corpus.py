"""Run ingestion, rule-based labeling, and synthetic run generation.

A dataset directory holds one CSV per run under runs/ (header row of
channel names, one decimal-float row per frame) and a labels.jsonl file
with one record per run.  Scenarios describe how to fabricate labeled
runs: a grammar is walked to pick a feature sequence, each feature
contributes a mean trajectory over some sampled duration, and white
Gaussian noise is added per channel.  Everything is deterministic given
the scenario and an integer seed.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DataFormatError, ValidationError
from .fileio import write_json_atomic, write_text_atomic
from .grammar import Grammar, Segment, grammar_from_doc, grammar_to_doc
from .model import ObservationSequence

log = logging.getLogger(__name__)

PROVENANCES = ("recorded", "synthetic")
RUNS_SUBDIR = "runs"
LABELS_FILENAME = "labels.jsonl"

MAX_WALK_ATTEMPTS = 1000


@dataclass(frozen=True)
class LabeledRun:
    """One run's frames plus its ordered, abutting segment labels."""

    run_id: str
    seq: ObservationSequence
    segments: tuple
    provenance: str = "recorded"
    scenario_seed: int = None

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValidationError(f"unknown provenance {self.provenance!r}")
        segments = tuple(Segment(*s) for s in self.segments)
        num_frames = self.seq.num_frames
        previous_end = None
        for seg in segments:
            if not 0 <= seg.start < seg.end <= num_frames:
                raise ValidationError(
                    f"run {self.run_id!r}: segment {seg.label!r} [{seg.start}, "
                    f"{seg.end}) falls outside the {num_frames}-frame run"
                )
            if previous_end is not None and seg.start != previous_end:
                raise ValidationError(
                    f"run {self.run_id!r}: segments are not contiguous at "
                    f"frame {seg.start}"
                )
            previous_end = seg.end
        object.__setattr__(self, "segments", segments)


@dataclass(frozen=True)
class SegmentationRule:
    """Event-based labeling rule for one feature.

    The onset fires when the first watched channel rises by at least
    `rise` between consecutive frames; the offset fires when the last
    watched channel falls by at least `fall`.  Segments shorter than
    min_duration are dropped.
    """

    label: str
    channels: tuple
    rise: float
    fall: float
    min_duration: int = 1

    def __post_init__(self):
        channels = tuple(int(c) for c in self.channels)
        if not channels:
            raise ValidationError(f"rule {self.label!r} watches no channels")
        if self.rise <= 0.0 or self.fall <= 0.0:
            raise ValidationError(f"rule {self.label!r} thresholds must be positive")
        if self.min_duration < 1:
            raise ValidationError(f"rule {self.label!r} min_duration must be >= 1")
        object.__setattr__(self, "channels", channels)


@dataclass(frozen=True)
class FeatureRegime:
    """Mean trajectory and duration range for one synthetic feature.

    keypoints maps channel names to value lists that are linearly
    interpolated across the segment; unlisted channels sit at 0.
    """

    duration: tuple
    keypoints: dict

    def __post_init__(self):
        lo, hi = (int(v) for v in self.duration)
        if lo < 1 or hi < lo:
            raise ValidationError(f"bad duration range ({lo}, {hi})")
        keypoints = {
            str(ch): tuple(float(v) for v in values)
            for ch, values in self.keypoints.items()
        }
        for ch, values in keypoints.items():
            if not values:
                raise ValidationError(f"channel {ch!r} has an empty keypoint list")
        object.__setattr__(self, "duration", (lo, hi))
        object.__setattr__(self, "keypoints", keypoints)


@dataclass(frozen=True)
class Scenario:
    """Everything needed to fabricate labeled runs."""

    name: str
    channels: tuple
    features: dict
    grammar: Grammar
    noise_sigma: np.ndarray
    default_label: str
    features_per_run: tuple
    dropout_mask: tuple = None
    forced_sequence: tuple = None

    def __post_init__(self):
        channels = tuple(str(c) for c in self.channels)
        if not channels:
            raise ValidationError("scenario needs at least one channel")
        sigma = np.broadcast_to(
            np.asarray(self.noise_sigma, dtype=np.float64), (len(channels),)
        ).copy()
        if np.any(sigma < 0.0):
            raise ValidationError("noise_sigma must be nonnegative")
        sigma.setflags(write=False)
        features = dict(self.features)
        for node in self.grammar.nodes:
            if node not in features:
                raise ValidationError(f"grammar node {node!r} has no feature regime")
        for label, regime in features.items():
            for ch in regime.keypoints:
                if ch not in channels:
                    raise ValidationError(
                        f"feature {label!r} references unknown channel {ch!r}"
                    )
        lo, hi = (int(v) for v in self.features_per_run)
        if lo < 1 or hi < lo:
            raise ValidationError(f"bad features_per_run range ({lo}, {hi})")
        dropout = self.dropout_mask
        if dropout is not None:
            dropout = tuple(str(c) for c in dropout)
            for ch in dropout:
                if ch not in channels:
                    raise ValidationError(f"dropout keeps unknown channel {ch!r}")
        forced = self.forced_sequence
        if forced is not None:
            forced = tuple(str(v) for v in forced)
            for label in forced:
                if label not in features:
                    raise ValidationError(f"forced sequence uses unknown label {label!r}")
        object.__setattr__(self, "name", str(self.name))
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "noise_sigma", sigma)
        object.__setattr__(self, "features_per_run", (lo, hi))
        object.__setattr__(self, "dropout_mask", dropout)
        object.__setattr__(self, "forced_sequence", forced)

    @property
    def num_channels(self) -> int:
        return len(self.channels)


def scenario_to_doc(scenario: Scenario) -> dict:
    doc = {
        "name": scenario.name,
        "channels": list(scenario.channels),
        "noise_sigma": [float(v) for v in scenario.noise_sigma],
        "default_label": scenario.default_label,
        "features_per_run": list(scenario.features_per_run),
        "features": {
            label: {
                "duration": list(regime.duration),
                "keypoints": {
                    ch: list(values) for ch, values in regime.keypoints.items()
                },
            }
            for label, regime in scenario.features.items()
        },
        "grammar": grammar_to_doc(scenario.grammar),
    }
    if scenario.dropout_mask is not None:
        doc["dropout_mask"] = list(scenario.dropout_mask)
    if scenario.forced_sequence is not None:
        doc["forced_sequence"] = list(scenario.forced_sequence)
    return doc


def scenario_from_doc(doc: dict) -> Scenario:
    try:
        features = {
            label: FeatureRegime(
                duration=tuple(entry["duration"]), keypoints=entry.get("keypoints", {})
            )
            for label, entry in doc["features"].items()
        }
        return Scenario(
            name=doc["name"],
            channels=tuple(doc["channels"]),
            features=features,
            grammar=grammar_from_doc(doc["grammar"]),
            noise_sigma=doc.get("noise_sigma", 1.0),
            default_label=doc["default_label"],
            features_per_run=tuple(doc["features_per_run"]),
            dropout_mask=tuple(doc["dropout_mask"]) if "dropout_mask" in doc else None,
            forced_sequence=(
                tuple(doc["forced_sequence"]) if "forced_sequence" in doc else None
            ),
        )
    except (KeyError, TypeError) as exc:
        raise DataFormatError(f"malformed scenario document: {exc}") from exc


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataFormatError(f"cannot read scenario {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"scenario {path} is not valid JSON: {exc}") from exc
    return scenario_from_doc(doc)


def save_scenario(scenario: Scenario, path) -> None:
    write_json_atomic(path, scenario_to_doc(scenario))


def _channel_names(seq: ObservationSequence) -> tuple:
    if seq.channel_names:
        return seq.channel_names
    return tuple(f"ch{i}" for i in range(seq.num_channels))


def save_sequence_csv(seq: ObservationSequence, path) -> None:
    lines = [",".join(_channel_names(seq))]
    for row in seq.frames:
        lines.append(",".join(repr(float(v)) for v in row))
    write_text_atomic(path, "\n".join(lines) + "\n")


def load_sequence_csv(path) -> ObservationSequence:
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8", newline="") as handle:
            reader = csv.reader(handle)
            rows = list(reader)
    except OSError as exc:
        raise DataFormatError(f"cannot read run file {path}: {exc}") from exc
    if len(rows) < 3:
        raise DataFormatError(f"{path}: a run needs a header and at least 2 frames")
    header = [name.strip() for name in rows[0]]
    width = len(header)
    frames = np.empty((len(rows) - 1, width))
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise DataFormatError(
                f"{path}: row {lineno} has {len(row)} cells, expected {width}"
            )
        try:
            frames[lineno - 2] = [float(cell) for cell in row]
        except ValueError as exc:
            raise DataFormatError(f"{path}: row {lineno}: {exc}") from exc
    return ObservationSequence(frames=frames, channel_names=tuple(header))


def write_labels(runs, path) -> None:
    """Write one JSONL record per labeled run."""
    lines = []
    for run in runs:
        record = {
            "run_id": run.run_id,
            "segments": [
                {"label": s.label, "start": s.start, "end": s.end}
                for s in run.segments
            ],
        }
        lines.append(json.dumps(record, ensure_ascii=False))
    write_text_atomic(path, "\n".join(lines) + "\n" if lines else "")


def read_labels(path):
    """Parse a labels file into an ordered list of (run_id, segments)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot read label file {path}: {exc}") from exc
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            run_id = record["run_id"]
            segments = tuple(
                Segment(str(s["label"]), int(s["start"]), int(s["end"]))
                for s in record["segments"]
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"{path}: line {lineno}: {exc}") from exc
        entries.append((run_id, segments))
    return entries


def save_runs(runs, directory) -> None:
    """Write a dataset directory: runs/<id>.csv plus labels.jsonl."""
    directory = Path(directory)
    for run in runs:
        save_sequence_csv(run.seq, directory / RUNS_SUBDIR / f"{run.run_id}.csv")
    write_labels(runs, directory / LABELS_FILENAME)


def load_sequences(directory) -> dict:
    """All run CSVs in a dataset directory, keyed by run id."""
    runs_dir = Path(directory) / RUNS_SUBDIR
    if not runs_dir.is_dir():
        raise DataFormatError(f"no {RUNS_SUBDIR}/ directory under {directory}")
    sequences = {}
    for path in sorted(runs_dir.glob("*.csv")):
        sequences[path.stem] = load_sequence_csv(path)
    return sequences


def load_runs(directory, labels_path=None):
    """Labeled runs from a dataset directory."""
    directory = Path(directory)
    if labels_path is None:
        labels_path = directory / LABELS_FILENAME
    entries = read_labels(labels_path)
    runs = []
    for run_id, segments in entries:
        seq_path = directory / RUNS_SUBDIR / f"{run_id}.csv"
        seq = load_sequence_csv(seq_path)
        runs.append(
            LabeledRun(run_id=run_id, seq=seq, segments=segments, provenance="recorded")
        )
    return runs


def select_channels(seq: ObservationSequence, wanted) -> ObservationSequence:
    """Restrict a sequence to the named channels, in the order given."""
    names = _channel_names(seq)
    indices = []
    for name in wanted:
        if name not in names:
            raise ValidationError(
                f"unknown channel {name!r}; available: {', '.join(names)}"
            )
        indices.append(names.index(name))
    return ObservationSequence(
        frames=seq.frames[:, indices],
        frame_period=seq.frame_period,
        channel_names=tuple(names[i] for i in indices),
    )


def first_derivative(seq: ObservationSequence) -> ObservationSequence:
    """Frame-to-frame differences; one frame shorter than the input."""
    if seq.num_frames < 3:
        raise ValidationError(
            "first_derivative needs at least 3 frames to produce a valid sequence"
        )
    return ObservationSequence(
        frames=seq.frames[1:] - seq.frames[:-1],
        frame_period=seq.frame_period,
        channel_names=tuple(f"{name}_d" for name in _channel_names(seq)),
    )


def segment_run(
    seq: ObservationSequence,
    rules,
    default_label: str,
    run_id: str = "run",
) -> LabeledRun:
    """Label a run by scanning each rule's onset/offset events.

    Overlapping matches are resolved by earliest onset, then rule order;
    the remaining frames get the default label.  Onsets still open at
    the end of the run are discarded (counted in a warning).
    """
    num_frames = seq.num_frames
    for rule in rules:
        for ch in rule.channels:
            if not 0 <= ch < seq.num_channels:
                raise ValidationError(
                    f"rule {rule.label!r} watches channel {ch}, run has "
                    f"{seq.num_channels}"
                )
    candidates = []
    unclosed = 0
    deltas = seq.frames[1:] - seq.frames[:-1]
    for order, rule in enumerate(rules):
        onset_channel = rule.channels[0]
        offset_channel = rule.channels[-1]
        open_start = None
        for t in range(num_frames - 1):
            if open_start is None:
                if deltas[t, onset_channel] >= rule.rise:
                    open_start = t + 1
            elif deltas[t, offset_channel] <= -rule.fall:
                end = t + 1
                if end - open_start >= rule.min_duration:
                    candidates.append((open_start, order, end, rule.label))
                open_start = None
        if open_start is not None:
            unclosed += 1
    if unclosed:
        log.warning("%s: discarded %d unclosed onset(s)", run_id, unclosed)
    accepted = []
    cursor = 0
    for start, _, end, label in sorted(candidates):
        if start >= cursor:
            accepted.append(Segment(label, start, end))
            cursor = end
    segments = []
    cursor = 0
    for seg in accepted:
        if seg.start > cursor:
            segments.append(Segment(default_label, cursor, seg.start))
        segments.append(seg)
        cursor = seg.end
    if cursor < num_frames:
        segments.append(Segment(default_label, cursor, num_frames))
    return LabeledRun(
        run_id=run_id, seq=seq, segments=tuple(segments), provenance="recorded"
    )


def build_corpora(runs):
    """Group segment slices by label; returns (corpora, excluded count).

    Slices shorter than 3 frames cannot be trained on and are skipped;
    the second return value counts them.
    """
    corpora = {}
    excluded = 0
    for run in runs:
        names = _channel_names(run.seq)
        for seg in run.segments:
            if seg.end - seg.start < 3:
                excluded += 1
                continue
            corpora.setdefault(seg.label, []).append(
                ObservationSequence(
                    frames=run.seq.frames[seg.start : seg.end],
                    frame_period=run.seq.frame_period,
                    channel_names=names,
                )
            )
    if excluded:
        log.warning("excluded %d segment(s) shorter than 3 frames", excluded)
    return corpora, excluded


def _pick(rng, names, probs):
    probs = np.asarray(probs, dtype=np.float64)
    probs = probs / probs.sum()
    return names[int(rng.choice(len(names), p=probs))]


def _sample_feature_walk(scenario: Scenario, rng) -> tuple:
    grammar = scenario.grammar
    lo, hi = scenario.features_per_run
    start_names = list(grammar.start_probs)
    start_probs = [grammar.start_probs[n] for n in start_names]
    for _ in range(MAX_WALK_ATTEMPTS):
        target = int(rng.integers(lo, hi + 1))
        node = _pick(rng, start_names, start_probs)
        walk = [node]
        while len(walk) < target:
            out = grammar.outgoing(node)
            if not out:
                break
            node = _pick(rng, [b for b, _ in out], [p for _, p in out])
            walk.append(node)
        if len(walk) == target and walk[-1] in grammar.end_nodes:
            return tuple(walk)
    raise ValidationError(
        f"scenario {scenario.name!r}: no legal feature sequence of length "
        f"[{lo}, {hi}] found after {MAX_WALK_ATTEMPTS} attempts"
    )


def _regime_means(regime: FeatureRegime, channels, duration: int) -> np.ndarray:
    means = np.zeros((duration, len(channels)))
    positions = np.linspace(0.0, 1.0, duration)
    for col, name in enumerate(channels):
        values = regime.keypoints.get(name)
        if values is None:
            continue
        if len(values) == 1:
            means[:, col] = values[0]
        else:
            anchors = np.linspace(0.0, 1.0, len(values))
            means[:, col] = np.interp(positions, anchors, values)
    return means


def synthesize_run(scenario: Scenario, seed: int) -> LabeledRun:
    """Fabricate one labeled run; identical output for identical inputs."""
    rng = np.random.default_rng(seed)
    if scenario.forced_sequence is not None:
        labels = scenario.forced_sequence
    else:
        labels = _sample_feature_walk(scenario, rng)
    durations = []
    for label in labels:
        lo, hi = scenario.features[label].duration
        durations.append(int(rng.integers(lo, hi + 1)))
    blocks = [
        _regime_means(scenario.features[label], scenario.channels, duration)
        for label, duration in zip(labels, durations)
    ]
    means = np.concatenate(blocks, axis=0)
    noise = rng.normal(0.0, 1.0, size=means.shape) * scenario.noise_sigma[None, :]
    frames = means + noise
    channels = scenario.channels
    if scenario.dropout_mask is not None:
        keep = [channels.index(name) for name in scenario.dropout_mask]
        frames = frames[:, keep]
        channels = scenario.dropout_mask
    segments = []
    cursor = 0
    for label, duration in zip(labels, durations):
        segments.append(Segment(label, cursor, cursor + duration))
        cursor += duration
    return LabeledRun(
        run_id=f"{scenario.name}-{seed:06d}",
        seq=ObservationSequence(frames=frames, channel_names=channels),
        segments=tuple(segments),
        provenance="synthetic",
        scenario_seed=seed,
    )


def rules_from_doc(doc) -> list:
    """Segmentation rules from their JSON form (a list of objects)."""
    if not isinstance(doc, list):
        raise DataFormatError("rules document must be a JSON array")
    rules = []
    for index, entry in enumerate(doc):
        try:
            rules.append(
                SegmentationRule(
                    label=str(entry["label"]),
                    channels=tuple(entry["channels"]),
                    rise=float(entry["rise"]),
                    fall=float(entry["fall"]),
                    min_duration=int(entry.get("min_duration", 1)),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"rule {index}: {exc}") from exc
    return rules


def load_rules(path) -> list:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataFormatError(f"cannot read rules {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"rules {path} are not valid JSON: {exc}") from exc
    return rules_from_doc(doc)
