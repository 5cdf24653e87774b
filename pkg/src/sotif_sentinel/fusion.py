"""Ensemble detection clustering (BSAS with intra-sample exclusivity) and fusion.

Each network in the ensemble contributes its post-NMS boxes for a frame. Boxes
are grouped sequentially into clusters, with at most one box per network in any
cluster, and each cluster is reduced to a mean box plus corner spread.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

DEFAULT_AFFINITY_THRESHOLD = 0.95


class FormatError(ValueError):
    """Malformed detection record. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"non-finite box coordinates {coords}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"degenerate box {coords}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    scores: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        if not self.scores:
            raise ValueError("detection has no category scores")
        for s in self.scores:
            if not (0.0 <= s <= 1.0):
                raise ValueError(f"score {s} outside [0, 1]")

    @property
    def winning_label(self) -> int:
        return argmax(self.scores)


@dataclass(frozen=True)
class NetworkFramePredictions:
    """One detector's boxes for one frame. Detections must already be post-NMS."""

    network_id: int
    frame_id: int
    detections: tuple[Detection, ...] = ()


@dataclass
class Cluster:
    members: list[tuple[int, Detection]] = field(default_factory=list)
    representative_box: BoundingBox | None = None
    winning_label: int = 0
    _score_sums: list[float] = field(default_factory=list, repr=False)
    _box_sums: list[float] = field(default_factory=list, repr=False)

    @classmethod
    def seed(cls, network_id: int, det: Detection) -> "Cluster":
        c = cls()
        c.add(network_id, det)
        return c

    @property
    def network_ids(self) -> list[int]:
        return [nid for nid, _ in self.members]

    def add(self, network_id: int, det: Detection) -> None:
        if self._score_sums and len(det.scores) != len(self._score_sums):
            raise ValueError("category count mismatch within cluster")
        if not self._score_sums:
            self._score_sums = [0.0] * len(det.scores)
            self._box_sums = [0.0] * 4
        self.members.append((network_id, det))
        for i, s in enumerate(det.scores):
            self._score_sums[i] += s
        for i, c in enumerate(det.box.as_list()):
            self._box_sums[i] += c
        n = len(self.members)
        self.representative_box = BoundingBox(*(b / n for b in self._box_sums))
        self.winning_label = argmax([s / n for s in self._score_sums])


@dataclass(frozen=True)
class FusedObject:
    mean_box: BoundingBox
    corner_std: tuple[float, float, float, float]
    mean_scores: tuple[float, ...]
    d: int
    winning_label: int
    confidence: float

    def to_dict(self) -> dict:
        return {
            "box": self.mean_box.as_list(),
            "corner_std": list(self.corner_std),
            "mean_scores": list(self.mean_scores),
            "d": self.d,
            "winning_label": self.winning_label,
            "confidence": self.confidence,
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "FusedObject":
        return cls(
            mean_box=BoundingBox(*rec["box"]),
            corner_std=tuple(float(s) for s in rec.get("corner_std", (0.0,) * 4)),
            mean_scores=tuple(float(s) for s in rec["mean_scores"]),
            d=int(rec["d"]),
            winning_label=int(rec["winning_label"]),
            confidence=float(rec["confidence"]),
        )


def argmax(values: Sequence[float]) -> int:
    """Index of the largest value; ties go to the lowest index."""
    best = 0
    for i in range(1, len(values)):
        if values[i] > values[best]:
            best = i
    return best


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def affinity(det: Detection, cluster: Cluster, threshold: float = DEFAULT_AFFINITY_THRESHOLD) -> bool:
    """Match iff the box overlaps the cluster's mean box by at least
    ``threshold`` IoU and both share the same winning label."""
    if len(det.scores) != len(cluster._score_sums):
        raise ValueError("category count mismatch between detection and cluster")
    if det.winning_label != cluster.winning_label:
        return False
    return iou(det.box, cluster.representative_box) >= threshold


def cluster_frame(
    frame: Sequence[NetworkFramePredictions],
    threshold: float = DEFAULT_AFFINITY_THRESHOLD,
) -> list[Cluster]:
    """Group one frame's ensemble predictions into object clusters.

    Networks are visited in ascending ``network_id`` and boxes in input order.
    Within one network's pass a cluster accepts at most one box; a box joins the
    first free matching cluster in creation order, otherwise it seeds a new one.
    The result depends on this order by construction.
    """
    ids = [p.network_id for p in frame]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate network_id in frame: {ids}")
    frame_ids = {p.frame_id for p in frame}
    if len(frame_ids) > 1:
        raise ValueError(f"inconsistent frame ids {sorted(frame_ids)}")

    ordered = sorted(frame, key=lambda p: p.network_id)
    clusters: list[Cluster] = []
    if not ordered:
        return clusters

    first = ordered[0]
    for det in first.detections:
        clusters.append(Cluster.seed(first.network_id, det))

    for preds in ordered[1:]:
        n = len(clusters)
        taken = [False] * n
        for det in preds.detections:
            label = det.winning_label
            box = det.box
            for k in range(n):
                if taken[k]:
                    continue
                c = clusters[k]
                if c.winning_label == label and iou(box, c.representative_box) >= threshold:
                    c.add(preds.network_id, det)
                    taken[k] = True
                    break
            else:
                clusters.append(Cluster.seed(preds.network_id, det))
    return clusters


def fuse(cluster: Cluster) -> FusedObject:
    if not cluster.members:
        raise ValueError("cannot fuse an empty cluster")
    dets = [det for _, det in cluster.members]
    d = len(dets)
    corners = list(zip(*(det.box.as_list() for det in dets)))
    means = [sum(c) / d for c in corners]
    # population std so a singleton gives exactly zero spread
    stds = tuple(
        math.sqrt(max(sum((v - mu) ** 2 for v in c) / d, 0.0)) for c, mu in zip(corners, means)
    )
    mean_scores = tuple(sum(col) / d for col in zip(*(det.scores for det in dets)))
    label = argmax(mean_scores)
    return FusedObject(
        mean_box=BoundingBox(*means),
        corner_std=stds,
        mean_scores=mean_scores,
        d=d,
        winning_label=label,
        confidence=mean_scores[label],
    )


def fuse_frame(
    frame: Sequence[NetworkFramePredictions],
    threshold: float = DEFAULT_AFFINITY_THRESHOLD,
) -> list[FusedObject]:
    return [fuse(c) for c in cluster_frame(frame, threshold)]


# -- JSON-lines ingestion -----------------------------------------------------


def parse_record(rec: object, line: int | None = None) -> NetworkFramePredictions:
    if not isinstance(rec, dict):
        raise FormatError("record must be a JSON object", line)
    try:
        frame_id = rec["frame"]
        network_id = rec["network"]
        raw_dets = rec.get("detections", [])
    except KeyError as exc:
        raise FormatError(f"missing key {exc}", line) from None
    if not isinstance(frame_id, int) or not isinstance(network_id, int) or isinstance(frame_id, bool):
        raise FormatError("'frame' and 'network' must be integers", line)
    if network_id < 0:
        raise FormatError("'network' must be non-negative", line)
    if not isinstance(raw_dets, list):
        raise FormatError("'detections' must be a list", line)
    dets = []
    n_cat = None
    for j, raw in enumerate(raw_dets):
        try:
            box = BoundingBox(*(float(v) for v in raw["box"]))
            det = Detection(box, tuple(raw["scores"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"detection {j}: {exc}", line) from None
        if n_cat is not None and len(det.scores) != n_cat:
            raise FormatError(f"detection {j}: inconsistent category count", line)
        n_cat = len(det.scores)
        dets.append(det)
    return NetworkFramePredictions(network_id, frame_id, tuple(dets))


def read_frames(lines: Iterable[str]) -> Iterator[tuple[int, list[NetworkFramePredictions]]]:
    """Parse detection JSON-lines and yield ``(frame_id, predictions)`` in
    ascending frame order. Records of one frame may arrive in any order."""
    frames: dict[int, list[NetworkFramePredictions]] = {}
    for lineno, text in enumerate(lines, start=1):
        text = text.strip()
        if not text:
            continue
        try:
            rec = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON ({exc.msg})", lineno) from None
        preds = parse_record(rec, lineno)
        bucket = frames.setdefault(preds.frame_id, [])
        if any(p.network_id == preds.network_id for p in bucket):
            raise FormatError(
                f"duplicate network {preds.network_id} for frame {preds.frame_id}", lineno
            )
        bucket.append(preds)
    for frame_id in sorted(frames):
        yield frame_id, sorted(frames[frame_id], key=lambda p: p.network_id)


def predictions_to_records(frame: Iterable[NetworkFramePredictions]) -> list[dict]:
    return [
        {
            "frame": p.frame_id,
            "network": p.network_id,
            "detections": [
                {"box": det.box.as_list(), "scores": list(det.scores)} for det in p.detections
            ],
        }
        for p in frame
    ]
