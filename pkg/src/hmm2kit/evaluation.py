"""Recognition scoring: alignment, confusion counts, and error rates.

References and hypotheses are compared segment-wise after dropping the
default filler label on both sides.  A hypothesis segment can claim a
reference segment when their frame overlap reaches a fraction of the
reference length; matching is greedy by descending overlap with ties
broken by earliest start, so scoring is deterministic.  Every reference
segment ends up recognized, substituted, or deleted, and every leftover
hypothesis segment is an insertion.  Rates are percentages of the
reference segments seen, insertions included.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import ValidationError
from .grammar import FeatureSequence, Segment

DEFAULT_OVERLAP_THRESHOLD = 0.5

PAIR_KINDS = ("match", "substitution", "insertion", "deletion")


class AlignedPair(NamedTuple):
    ref: Segment
    hyp: Segment
    kind: str


@dataclass(frozen=True)
class Alignment:
    """Pairing of one run's reference and hypothesis segments."""

    pairs: tuple

    def __post_init__(self):
        pairs = tuple(self.pairs)
        for pair in pairs:
            if pair.kind not in PAIR_KINDS:
                raise ValidationError(f"unknown pair kind {pair.kind!r}")
        object.__setattr__(self, "pairs", pairs)

    def kinds(self) -> dict:
        counts = {}
        for pair in self.pairs:
            counts[pair.kind] = counts.get(pair.kind, 0) + 1
        return counts


def _overlap(a: Segment, b: Segment) -> int:
    return max(0, min(a.end, b.end) - max(b.start, a.start))


def align(
    reference: FeatureSequence,
    hypothesis: FeatureSequence,
    default_label: str,
    overlap_threshold: float = DEFAULT_OVERLAP_THRESHOLD,
) -> Alignment:
    """Pair hypothesis segments with reference segments by frame overlap."""
    if reference.num_frames != hypothesis.num_frames:
        raise ValidationError(
            f"reference covers {reference.num_frames} frames but hypothesis "
            f"covers {hypothesis.num_frames}"
        )
    refs = [s for s in reference.segments if s.label != default_label]
    hyps = [s for s in hypothesis.segments if s.label != default_label]
    candidates = []
    for ri, ref in enumerate(refs):
        needed = overlap_threshold * (ref.end - ref.start)
        for hi, hyp in enumerate(hyps):
            shared = _overlap(ref, hyp)
            if shared >= needed and shared > 0:
                candidates.append((-shared, ref.start, hyp.start, ri, hi))
    candidates.sort()
    ref_match = {}
    hyp_match = {}
    for _, _, _, ri, hi in candidates:
        if ri in ref_match or hi in hyp_match:
            continue
        ref_match[ri] = hi
        hyp_match[hi] = ri
    pairs = []
    for ri, ref in enumerate(refs):
        if ri in ref_match:
            hyp = hyps[ref_match[ri]]
            kind = "match" if hyp.label == ref.label else "substitution"
            pairs.append(AlignedPair(ref=ref, hyp=hyp, kind=kind))
        else:
            pairs.append(AlignedPair(ref=ref, hyp=None, kind="deletion"))
    for hi, hyp in enumerate(hyps):
        if hi not in hyp_match:
            pairs.append(AlignedPair(ref=None, hyp=hyp, kind="insertion"))
    return Alignment(pairs=tuple(pairs))


@dataclass(frozen=True)
class EvaluationReport:
    """Aggregated confusion counts and percentage rates.

    confusion[i, j] counts reference segments of labels[i] that were
    recognized as labels[j]; deletions and insertions sit outside the
    square matrix, indexed by reference and hypothesis label.
    """

    labels: tuple
    confusion: np.ndarray
    insertions: np.ndarray
    deletions: np.ndarray
    seen: int
    recognized: int
    substituted: int
    deleted: int
    inserted: int

    @property
    def rates(self) -> dict:
        def pct(count):
            return 100.0 * count / self.seen if self.seen else 0.0

        return {
            "recognized": pct(self.recognized),
            "substituted": pct(self.substituted),
            "deleted": pct(self.deleted),
            "inserted": pct(self.inserted),
        }

    def to_doc(self) -> dict:
        return {
            "labels": list(self.labels),
            "confusion": [[int(v) for v in row] for row in self.confusion],
            "insertions": {
                label: int(v) for label, v in zip(self.labels, self.insertions)
            },
            "deletions": {
                label: int(v) for label, v in zip(self.labels, self.deletions)
            },
            "counts": {
                "seen": self.seen,
                "recognized": self.recognized,
                "substituted": self.substituted,
                "deleted": self.deleted,
                "inserted": self.inserted,
            },
            "rates": self.rates,
        }

    def render_text(self) -> str:
        """Confusion table with recognized labels as rows and true labels
        as columns, plus the Ins. column, Del. row, totals, and per-label
        recognition percentages."""
        labels = list(self.labels)
        k = len(labels)
        col_seen = self.confusion.sum(axis=1) + self.deletions
        header = [""] + labels + ["Ins."]
        rows = [header]
        for j, hyp_label in enumerate(labels):
            cells = [str(int(self.confusion[i, j])) for i in range(k)]
            rows.append([hyp_label] + cells + [str(int(self.insertions[j]))])
        rows.append(["Del."] + [str(int(v)) for v in self.deletions] + [""])
        rows.append(
            ["Total"] + [str(int(v)) for v in col_seen] + [str(int(self.inserted))]
        )
        reco = []
        for i in range(k):
            if col_seen[i]:
                reco.append(f"{100.0 * self.confusion[i, i] / col_seen[i]:.1f}")
            else:
                reco.append("-")
        rows.append(["% reco"] + reco + [""])
        widths = [max(len(row[c]) for row in rows) for c in range(len(header))]
        lines = []
        for row in rows:
            first = row[0].ljust(widths[0])
            rest = "  ".join(cell.rjust(w) for cell, w in zip(row[1:], widths[1:]))
            lines.append((first + "  " + rest).rstrip())
        summary = self.rates
        lines.append("")
        lines.append(
            f"seen {self.seen}  recognized {self.recognized} "
            f"({summary['recognized']:.1f}%)  substituted {self.substituted} "
            f"({summary['substituted']:.1f}%)  deleted {self.deleted} "
            f"({summary['deleted']:.1f}%)  inserted {self.inserted} "
            f"({summary['inserted']:.1f}%)"
        )
        return "\n".join(lines) + "\n"


def report(alignments, labels=None) -> EvaluationReport:
    """Aggregate alignments into one confusion matrix and global counts."""
    alignments = list(alignments)
    if not alignments:
        raise ValidationError("report needs at least one alignment")
    found = set()
    for alignment in alignments:
        for pair in alignment.pairs:
            if pair.ref is not None:
                found.add(pair.ref.label)
            if pair.hyp is not None:
                found.add(pair.hyp.label)
    if labels is None:
        labels = tuple(sorted(found))
    else:
        labels = tuple(labels)
        missing = found - set(labels)
        if missing:
            raise ValidationError(f"alignments use labels outside the list: {missing}")
    index = {label: i for i, label in enumerate(labels)}
    k = len(labels)
    confusion = np.zeros((k, k), dtype=np.int64)
    insertions = np.zeros(k, dtype=np.int64)
    deletions = np.zeros(k, dtype=np.int64)
    recognized = substituted = deleted = inserted = 0
    for alignment in alignments:
        for pair in alignment.pairs:
            if pair.kind == "insertion":
                insertions[index[pair.hyp.label]] += 1
                inserted += 1
            elif pair.kind == "deletion":
                deletions[index[pair.ref.label]] += 1
                deleted += 1
            else:
                confusion[index[pair.ref.label], index[pair.hyp.label]] += 1
                if pair.kind == "match":
                    recognized += 1
                else:
                    substituted += 1
    seen = recognized + substituted + deleted
    return EvaluationReport(
        labels=labels,
        confusion=confusion,
        insertions=insertions,
        deletions=deletions,
        seen=seen,
        recognized=recognized,
        substituted=substituted,
        deleted=deleted,
        inserted=inserted,
    )
