"""Segmentation scoring and edit-distance re-alignment of hypothesis text."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from segvox.corpus import FrameLabels
from segvox.errors import AlignmentError, DataError
from segvox.segments import SegmentHypothesis


@dataclass
class BoundaryMetrics:
    precision: float
    recall: float
    f1: float
    tolerance_s: float
    n_hyp: int
    n_ref: int
    true_positives: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AlignmentResult:
    split_points: list[int]
    total_edit_distance: int

    def chunks(self, hyp_tokens: Sequence[str]) -> list[list[str]]:
        edges = [0, *self.split_points, len(hyp_tokens)]
        return [list(hyp_tokens[a:b]) for a, b in zip(edges, edges[1:])]


def _validate(segs: Sequence[SegmentHypothesis], what: str) -> None:
    for a, b in zip(segs, segs[1:]):
        if b.start_s < a.end_s:
            raise DataError(f"{what} segments unsorted or overlapping at {b.start_s:.3f}s")


def boundaries(segs: Sequence[SegmentHypothesis]) -> list[float]:
    return sorted(t for s in segs for t in (s.start_s, s.end_s))


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def match_boundaries(hyp: Sequence[float], ref: Sequence[float], tolerance_s: float) -> int:
    """Greedy nearest-first one-to-one matching; returns the match count.

    Candidate pairs within tolerance are taken in order of distance, ties
    broken by the (smaller, larger) time of the pair, which keeps the count
    symmetric in its two arguments.
    """
    pairs = []
    for i, h in enumerate(hyp):
        for j, r in enumerate(ref):
            d = abs(h - r)
            if d <= tolerance_s:
                pairs.append((d, min(h, r), max(h, r), i, j))
    pairs.sort()
    used_h, used_r = set(), set()
    for _, _, _, i, j in pairs:
        if i not in used_h and j not in used_r:
            used_h.add(i)
            used_r.add(j)
    return len(used_h)


def boundary_metrics(hyp: Sequence[SegmentHypothesis], ref: Sequence[SegmentHypothesis],
                     tolerance_s: float = 0.2) -> BoundaryMetrics:
    _validate(hyp, "hypothesis")
    _validate(ref, "reference")
    hb, rb = boundaries(hyp), boundaries(ref)
    tp = match_boundaries(hb, rb, tolerance_s)
    precision = tp / len(hb) if hb else 0.0
    recall = tp / len(rb) if rb else 0.0
    return BoundaryMetrics(precision, recall, f1_score(precision, recall), tolerance_s,
                           len(hb), len(rb), tp)


def over_under_counts(hyp: Sequence[SegmentHypothesis], ref: Sequence[SegmentHypothesis],
                      tolerance_s: float = 0.2) -> tuple[int, int]:
    """(over, under) segmentation counts.

    over: reference segments with a hypothesis boundary strictly inside
    their interior shrunk by ``tolerance_s`` on both sides.
    under: hypothesis segments holding two or more reference midpoints.
    """
    _validate(hyp, "hypothesis")
    _validate(ref, "reference")
    hb = np.array(boundaries(hyp))
    over = 0
    for r in ref:
        lo, hi = r.start_s + tolerance_s, r.end_s - tolerance_s
        if hi > lo and np.any((hb > lo) & (hb < hi)):
            over += 1
    mids = np.array([(r.start_s + r.end_s) / 2 for r in ref])
    under = sum(
        1 for h in hyp if np.count_nonzero((mids >= h.start_s) & (mids < h.end_s)) >= 2
    )
    return over, under


def frame_f1(pred: FrameLabels | Sequence[int], truth: FrameLabels | Sequence[int]) -> dict:
    """Precision/recall/F1 with label 1 (outside utterance) as the positive class."""
    p = np.asarray(getattr(pred, "labels", pred))
    t = np.asarray(getattr(truth, "labels", truth))
    if p.shape != t.shape:
        raise AlignmentError(f"{len(p)} predicted vs {len(t)} reference labels")
    tp = int(np.sum((p == 1) & (t == 1)))
    n_pred, n_true = int(np.sum(p == 1)), int(np.sum(t == 1))
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_true if n_true else 0.0
    return {"precision": precision, "recall": recall, "f1": f1_score(precision, recall)}


def segments_to_frames(segs: Sequence[SegmentHypothesis], duration_s: float,
                       frame_s: float = 0.01) -> np.ndarray:
    """0/1 labels on a regular grid: 0 where the frame center lies in a segment."""
    n = int(np.ceil(duration_s / frame_s))
    centers = (np.arange(n) + 0.5) * frame_s
    out = np.ones(n, dtype=np.int8)
    for s in segs:
        out[(centers >= s.start_s) & (centers < s.end_s)] = 0
    return out


def levenshtein(a: Sequence[str], b: Sequence[str]) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def _chunk_costs(hyp: Sequence[str], ref: Sequence[str]) -> np.ndarray:
    """cost[i, j] = edit distance between hyp[i:j] and ref, for i <= j."""
    n, m = len(hyp), len(ref)
    cost = np.full((n + 1, n + 1), np.iinfo(np.int64).max // 4, dtype=np.int64)
    for i in range(n + 1):
        row = np.arange(m + 1)
        cost[i, i] = m
        for j in range(i + 1, n + 1):
            tok = hyp[j - 1]
            new = np.empty_like(row)
            new[0] = row[0] + 1
            for k in range(1, m + 1):
                new[k] = min(row[k] + 1, new[k - 1] + 1, row[k - 1] + (tok != ref[k - 1]))
            row = new
            cost[i, j] = row[m]
    return cost


def align_to_reference(hyp_tokens: Sequence[str], ref_sentences: Sequence[Sequence[str]]
                       ) -> AlignmentResult:
    """Split a hypothesis token stream into one chunk per reference sentence.

    Minimises the summed token-level Levenshtein distance between chunks and
    sentences. Among optimal splits the lexicographically smallest (leftmost)
    one is returned. Cost is O(R * n^2 * m) for R sentences, n hypothesis
    tokens and m tokens per sentence.
    """
    if not ref_sentences:
        raise DataError("need at least one reference sentence")
    n, r_count = len(hyp_tokens), len(ref_sentences)
    costs = [_chunk_costs(hyp_tokens, ref) for ref in ref_sentences]
    inf = np.iinfo(np.int64).max // 4
    # best[r, j]: cheapest alignment of sentences r.. to hyp[j:]
    best = np.full((r_count + 1, n + 1), inf, dtype=np.int64)
    best[r_count, n] = 0
    for r in range(r_count - 1, -1, -1):
        for j in range(n + 1):
            cand = costs[r][j, j:] + best[r + 1, j:]
            best[r, j] = cand.min()
    splits, j = [], 0
    for r in range(r_count - 1):
        cand = costs[r][j, j:] + best[r + 1, j:]
        j = j + int(np.argmin(cand))
        splits.append(j)
    return AlignmentResult(splits, int(best[0, 0]))
