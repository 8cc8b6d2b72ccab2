"""Detection, prediction and planning metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import box_corners_batch, obb_overlap_batch, rect_iou
from .prediction import TrajectoryDistribution

EPA_TAU = 2.0
EPA_ALPHA = 0.5
EGO_EXTENT = (4.5, 1.8)


@dataclass(frozen=True)
class MatchResult:
    """Greedy detection-to-ground-truth assignment.

    ``pairs`` holds ``(detection index, gt index)``; ``min_fde`` is aligned
    with ``pairs`` (``None`` where no prediction was scored).
    """

    pairs: tuple[tuple[int, int], ...]
    false_positives: tuple[int, ...]
    false_negatives: tuple[int, ...]
    min_fde: tuple[float | None, ...] = ()

    @property
    def n_gt(self) -> int:
        return len(self.pairs) + len(self.false_negatives)

    @property
    def recall(self) -> float | None:
        return len(self.pairs) / self.n_gt if self.n_gt else None

    def with_fde(self, fde: Sequence[float | None]) -> "MatchResult":
        if len(fde) != len(self.pairs):
            raise ValueError("one minFDE per true-positive pair")
        return MatchResult(self.pairs, self.false_positives, self.false_negatives, tuple(fde))


def _footprint(box):
    return box.footprint if hasattr(box, "footprint") else tuple(box)


def match_detections(detections: Sequence, confidences: Sequence[float], gt: Sequence,
                     iou_threshold: float = 0.5) -> MatchResult:
    """Confidence-ordered greedy matching at ``IoU >= iou_threshold``.

    ``detections`` and ``gt`` are boxes with a ``footprint`` or plain
    ``(x, y, heading, length, width)`` tuples.
    """
    order = sorted(range(len(detections)), key=lambda i: (-confidences[i], i))
    free = set(range(len(gt)))
    pairs, fps = [], []
    for i in order:
        fi = _footprint(detections[i])
        best, best_iou = None, iou_threshold
        for j in sorted(free):
            iou = rect_iou(fi, _footprint(gt[j]))
            if iou >= best_iou and (best is None or iou > best_iou):
                best, best_iou = j, iou
        if best is None:
            fps.append(i)
        else:
            free.discard(best)
            pairs.append((i, best))
    return MatchResult(tuple(pairs), tuple(fps), tuple(sorted(free)))


def average_precision(detections: Sequence, confidences: Sequence[float], gt: Sequence,
                      iou_threshold: float = 0.5) -> float | None:
    """All-point interpolated area under the precision-recall curve.

    Returns ``None`` when there is no ground truth.
    """
    if len(gt) == 0:
        return None
    m = match_detections(detections, confidences, gt, iou_threshold)
    tp_set = {i for i, _ in m.pairs}
    order = sorted(range(len(detections)), key=lambda i: (-confidences[i], i))
    tp = np.array([1.0 if i in tp_set else 0.0 for i in order])
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    rec = ctp / len(gt)
    prec = ctp / (ctp + cfp)
    mrec = np.concatenate([[0.0], rec, [1.0]])
    mpre = np.concatenate([[0.0], prec, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def displacement_errors(dist: TrajectoryDistribution, n: int, gt_future) -> tuple[float, float]:
    """``(minADE, minFDE)`` of object ``n`` against its ``(K, 2)`` future."""
    gt_future = np.asarray(gt_future, dtype=float)
    err = np.linalg.norm(dist.means[:, n] - gt_future[None], axis=-1)  # (M, K)
    return float(err.mean(axis=1).min()), float(err[:, -1].min())


def min_ade_fde(dist: TrajectoryDistribution, gt_futures) -> tuple[float | None, float | None]:
    """Object-averaged minADE and minFDE.

    ``gt_futures`` maps object index to its ``(K, 2)`` ground-truth future
    (a sequence aligned with the objects also works; ``None`` entries and
    missing objects are skipped).
    """
    items = gt_futures.items() if isinstance(gt_futures, dict) else enumerate(gt_futures)
    ade, fde = [], []
    for n, fut in items:
        if fut is None:
            continue
        a, f = displacement_errors(dist, n, fut)
        ade.append(a)
        fde.append(f)
    if not ade:
        return None, None
    return float(np.mean(ade)), float(np.mean(fde))


def epa(matches: MatchResult, tau: float = EPA_TAU, alpha: float = EPA_ALPHA) -> float | None:
    """``(#TP with minFDE < tau - alpha * #FP) / #GT``; ``None`` without ground truth."""
    if matches.n_gt == 0:
        return None
    good = sum(1 for f in matches.min_fde if f is not None and f < tau)
    return (good - alpha * len(matches.false_positives)) / matches.n_gt


def resample(times, states, new_times) -> np.ndarray:
    """Linear interpolation of each state column onto ``new_times``."""
    states = np.asarray(states, dtype=float)
    return np.column_stack([np.interp(new_times, times, states[:, i]) for i in range(states.shape[1])])


def plan_collides(plan_times, plan_states, gt_times, gt_boxes, ego_extent=EGO_EXTENT) -> bool:
    """Does the planned ego footprint meet any ground-truth box at a shared time?

    ``plan_states`` rows are ``(s, v, l, phi)``; ``gt_boxes`` is
    ``(N, T, 5)`` of ``(x, y, heading, length, width)`` on ``gt_times``.
    Only ground-truth times inside the plan's time span are checked.
    """
    gt_boxes = np.asarray(gt_boxes, dtype=float)
    if gt_boxes.size == 0:
        return False
    gt_times = np.asarray(gt_times, dtype=float)
    inside = (gt_times >= plan_times[0] - 1e-9) & (gt_times <= plan_times[-1] + 1e-9)
    if not inside.any():
        return False
    ego = resample(plan_times, plan_states, gt_times[inside])
    ego_c = box_corners_batch(ego[:, 0], ego[:, 2], ego[:, 3], ego_extent[0], ego_extent[1])
    g = gt_boxes[:, inside]
    gt_c = box_corners_batch(g[..., 0], g[..., 1], g[..., 2], g[..., 3], g[..., 4])
    return bool(obb_overlap_batch(ego_c[None], gt_c).any())


def collision_rate(plans: Sequence[tuple], ground_truth: Sequence[tuple], ego_extent=EGO_EXTENT) -> float:
    """Fraction of scenarios whose plan collides with ground-truth traffic.

    ``plans[i] = (times, states)`` and ``ground_truth[i] = (times, boxes)``.
    """
    if len(plans) != len(ground_truth):
        raise ValueError("one ground truth per plan")
    if not plans:
        return 0.0
    hits = [plan_collides(pt, ps, gt, gb, ego_extent) for (pt, ps), (gt, gb) in zip(plans, ground_truth)]
    return float(np.mean(hits))
