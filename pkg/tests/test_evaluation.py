"""Segment alignment and recognition-rate reporting."""

import numpy as np
import pytest

from hmm2kit.evaluation import align, report
from hmm2kit.exceptions import ValidationError
from hmm2kit.grammar import FeatureSequence, Segment

BG = "bg"


def _fs(total, *marked):
    """Feature sequence over [0, total) with bg filler around marked spans."""
    segments = []
    cursor = 0
    for label, start, end in sorted(marked, key=lambda m: m[1]):
        if start > cursor:
            segments.append(Segment(BG, cursor, start))
        segments.append(Segment(label, start, end))
        cursor = end
    if cursor < total:
        segments.append(Segment(BG, cursor, total))
    return FeatureSequence(segments=tuple(segments), log_joint=0.0)


def test_same_label_overlap_is_match():
    alignment = align(
        _fs(80, ("A", 10, 40)), _fs(80, ("A", 12, 38)), BG, overlap_threshold=0.5
    )
    assert alignment.kinds() == {"match": 1}


def test_label_mismatch_is_substitution():
    alignment = align(_fs(80, ("A", 10, 40)), _fs(80, ("B", 12, 38)), BG, 0.5)
    assert alignment.kinds() == {"substitution": 1}


def test_unmatched_hyp_is_insertion():
    alignment = align(
        _fs(80, ("A", 10, 40)),
        _fs(80, ("A", 10, 40), ("C", 60, 70)),
        BG,
        0.5,
    )
    assert alignment.kinds() == {"match": 1, "insertion": 1}


def test_unmatched_ref_is_deletion():
    alignment = align(
        _fs(80, ("A", 10, 30), ("B", 40, 60)), _fs(80, ("A", 10, 30)), BG, 0.5
    )
    assert alignment.kinds() == {"match": 1, "deletion": 1}


def test_overlap_below_threshold_does_not_match():
    # 10 shared frames out of a 30-frame reference is under one half
    alignment = align(_fs(80, ("A", 10, 40)), _fs(80, ("A", 30, 50)), BG, 0.5)
    assert alignment.kinds() == {"deletion": 1, "insertion": 1}


def test_default_label_is_ignored_on_both_sides():
    alignment = align(_fs(50, ("A", 5, 25)), _fs(50, ("A", 6, 26)), BG, 0.5)
    kinds = [pair.kind for pair in alignment.pairs]
    assert kinds == ["match"]


def test_range_mismatch_rejected():
    with pytest.raises(ValidationError):
        align(_fs(50, ("A", 5, 25)), _fs(60, ("A", 5, 25)), BG, 0.5)


def test_greedy_matching_prefers_largest_overlap():
    reference = _fs(100, ("A", 10, 50))
    hypothesis = _fs(100, ("A", 12, 48), ("A", 60, 90))
    alignment = align(reference, hypothesis, BG, 0.5)
    matched = [p for p in alignment.pairs if p.kind == "match"]
    assert len(matched) == 1
    assert matched[0].hyp.start == 12


def test_report_counts_and_rates():
    alignments = []
    for _ in range(13):
        alignments.append(align(_fs(40, ("A", 5, 25)), _fs(40, ("A", 5, 25)), BG, 0.5))
    alignments.append(align(_fs(40, ("A", 5, 25)), _fs(40, ("B", 5, 25)), BG, 0.5))
    alignments.append(align(_fs(40, ("B", 5, 25)), _fs(40,), BG, 0.5))
    alignments.append(align(_fs(40,), _fs(40, ("A", 5, 25)), BG, 0.5))
    result = report(alignments)
    assert result.seen == 15
    assert result.recognized == 13
    assert result.substituted == 1
    assert result.deleted == 1
    assert result.inserted == 1
    rates = result.rates
    assert rates["recognized"] == pytest.approx(100.0 * 13 / 15)
    assert rates["substituted"] == pytest.approx(100.0 * 1 / 15)
    assert rates["deleted"] == pytest.approx(100.0 * 1 / 15)
    assert rates["inserted"] == pytest.approx(100.0 * 1 / 15)


def test_partition_invariant_holds():
    rng = np.random.default_rng(0)
    alignments = []
    for _ in range(30):
        ref_marks = []
        hyp_marks = []
        cursor = 5
        while cursor < 70:
            width = int(rng.integers(5, 12))
            label = str(rng.choice(["A", "B", "C"]))
            if rng.random() < 0.8:
                ref_marks.append((label, cursor, cursor + width))
            if rng.random() < 0.8:
                hyp_label = str(rng.choice(["A", "B", "C"]))
                hyp_marks.append((hyp_label, cursor, cursor + width))
            cursor += width + 3
        alignments.append(align(_fs(100, *ref_marks), _fs(100, *hyp_marks), BG, 0.5))
    result = report(alignments)
    assert result.seen == result.recognized + result.substituted + result.deleted
    assert result.confusion.trace() == result.recognized
    off_diagonal = result.confusion.sum() - result.confusion.trace()
    assert off_diagonal == result.substituted
    assert result.insertions.sum() == result.inserted
    assert result.deletions.sum() == result.deleted


def test_identity_hypothesis_scores_perfect():
    reference = _fs(90, ("A", 10, 30), ("B", 40, 60), ("C", 70, 85))
    result = report([align(reference, reference, BG, 0.5)])
    assert result.seen == 3
    assert result.recognized == 3
    assert result.rates["recognized"] == pytest.approx(100.0)
    assert result.substituted == result.deleted == result.inserted == 0


def test_insertion_order_does_not_change_counts():
    reference = _fs(100, ("A", 10, 30))
    hyp_one = _fs(100, ("A", 10, 30), ("B", 40, 50), ("C", 60, 70))
    hyp_two = _fs(100, ("A", 10, 30), ("C", 40, 50), ("B", 60, 70))
    one = report([align(reference, hyp_one, BG, 0.5)])
    two = report([align(reference, hyp_two, BG, 0.5)])
    assert one.inserted == two.inserted == 2
    assert one.recognized == two.recognized == 1
    np.testing.assert_array_equal(
        one.insertions.sum(), two.insertions.sum()
    )


def test_report_rejects_empty_input():
    with pytest.raises(ValidationError):
        report([])


def test_report_text_layout():
    alignments = [
        align(_fs(40, ("A", 5, 25)), _fs(40, ("A", 5, 25)), BG, 0.5),
        align(_fs(40, ("B", 5, 25)), _fs(40, ("A", 5, 25)), BG, 0.5),
        align(_fs(40,), _fs(40, ("B", 10, 20)), BG, 0.5),
    ]
    result = report(alignments)
    text = result.render_text()
    assert "Ins." in text
    assert "% reco" in text
    assert "Del." in text
    assert "seen 2" in text


def test_report_document_shape():
    result = report([align(_fs(40, ("A", 5, 25)), _fs(40, ("A", 5, 25)), BG, 0.5)])
    doc = result.to_doc()
    assert doc["labels"] == ["A"]
    assert doc["counts"]["seen"] == 1
    assert doc["counts"]["recognized"] == 1
    assert doc["rates"]["recognized"] == pytest.approx(100.0)
    assert doc["confusion"] == [[1]]


def test_explicit_label_superset():
    alignment = align(_fs(40, ("A", 5, 25)), _fs(40, ("A", 5, 25)), BG, 0.5)
    result = report([alignment], labels=["A", "B", "Z"])
    assert result.labels == ("A", "B", "Z")
    assert result.confusion.shape == (3, 3)
    with pytest.raises(ValidationError):
        report([alignment], labels=["B"])
