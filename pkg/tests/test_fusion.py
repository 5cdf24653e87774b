import json
import math

import numpy as np
import pytest

from conftest import as_index_pairs, random_frame, reference_clusters
from sotif_sentinel.fusion import (
    BoundingBox,
    Cluster,
    Detection,
    FormatError,
    NetworkFramePredictions,
    affinity,
    argmax,
    cluster_frame,
    fuse,
    fuse_frame,
    iou,
    predictions_to_records,
    read_frames,
)


def box(*c):
    return BoundingBox(*map(float, c))


def det(b, label=6, C=11, p=0.9):
    s = [0.01] * C
    s[label] = p
    return Detection(b, tuple(s))


def net(i, *dets, frame=0):
    return NetworkFramePredictions(i, frame, tuple(dets))


# -- iou / affinity -----------------------------------------------------------


def test_iou_identity():
    assert iou(box(0, 0, 10, 10), box(0, 0, 10, 10)) == 1.0


def test_iou_disjoint():
    assert iou(box(0, 0, 10, 10), box(20, 20, 30, 30)) == 0.0


def test_iou_half_shift_is_one_third():
    assert iou(box(0, 0, 10, 10), box(5, 0, 15, 10)) == pytest.approx(1 / 3, abs=1e-15)


def test_iou_touching_edges_is_zero():
    assert iou(box(0, 0, 10, 10), box(10, 0, 20, 10)) == 0.0


def test_degenerate_box_rejected():
    with pytest.raises(ValueError):
        box(0, 0, 0, 10)
    with pytest.raises(ValueError):
        box(0, 0, math.nan, 10)


def test_affinity_needs_same_label():
    b = box(0, 0, 10, 10)
    c = Cluster.seed(0, det(b, label=6))
    assert affinity(det(b, label=6), c)
    assert not affinity(det(b, label=10), c)


def test_affinity_iou_below_threshold():
    c = Cluster.seed(0, det(box(0, 0, 100, 10)))
    x = 10 / 1.9  # (100 - x) / (100 + x) = 0.9
    shifted = box(x, 0, 100 + x, 10)
    assert iou(c.representative_box, shifted) == pytest.approx(0.90)
    assert not affinity(det(shifted), c)
    assert affinity(det(shifted), c, threshold=0.9 - 1e-9)


def test_argmax_ties_lowest_index():
    assert argmax([0.5, 0.5, 0.1]) == 0


# -- clustering ---------------------------------------------------------------


def test_single_network_gives_singletons():
    frame = [net(0, det(box(0, 0, 10, 10)), det(box(50, 50, 60, 60)), det(box(0, 0, 10, 10), label=2))]
    clusters = cluster_frame(frame)
    assert [len(c.members) for c in clusters] == [1, 1, 1]


def test_two_networks_identical_box_merge():
    b = box(0, 0, 10, 10)
    clusters = cluster_frame([net(0, det(b)), net(1, det(b))])
    assert len(clusters) == 1 and clusters[0].network_ids == [0, 1]


def test_exclusivity_second_copy_opens_new_cluster():
    b = box(0, 0, 10, 10)
    clusters = cluster_frame([net(0, det(b)), net(1, det(b), det(b))])
    assert [c.network_ids for c in clusters] == [[0, 1], [1]]


def test_network_order_is_canonical():
    b = box(0, 0, 10, 10)
    a = cluster_frame([net(1, det(b), det(b)), net(0, det(b))])
    assert [c.network_ids for c in a] == [[0, 1], [1]]


def test_duplicate_network_rejected():
    with pytest.raises(ValueError):
        cluster_frame([net(0), net(0)])


def test_empty_frame():
    assert cluster_frame([]) == []
    assert fuse_frame([net(0), net(1)]) == []


@pytest.mark.parametrize("theta", [0.95, 0.7, 0.3])
def test_fuzz_matches_reference_and_invariants(theta):
    rng = np.random.default_rng(7)
    for f in range(200):
        frame = random_frame(rng, T=int(rng.integers(1, 6)), frame_id=f)
        clusters = cluster_frame(frame, theta)
        assert as_index_pairs(frame, clusters) == reference_clusters(frame, theta)
        nets = [c.network_ids for c in clusters]
        assert all(len(set(n)) == len(n) for n in nets)
        assert sum(len(c.members) for c in clusters) == sum(len(p.detections) for p in frame)


# -- fusion -------------------------------------------------------------------


def test_fuse_mean_and_population_std():
    s1 = [0.01] * 11
    s2 = [0.01] * 11
    s1[6], s2[6] = 0.9, 0.7
    c = Cluster.seed(0, Detection(box(0, 0, 10, 10), tuple(s1)))
    c.add(1, Detection(box(2, 0, 10, 10), tuple(s2)))
    obj = fuse(c)
    assert obj.mean_box.x1 == 1.0
    assert obj.corner_std[0] == 1.0
    assert obj.corner_std[1:] == (0.0, 0.0, 0.0)
    assert obj.mean_scores[6] == pytest.approx(0.8)
    assert obj.d == 2 and obj.winning_label == 6
    assert obj.confidence == pytest.approx(0.8)


def test_singleton_has_zero_spread():
    obj = fuse(Cluster.seed(3, det(box(1, 2, 3, 4))))
    assert obj.corner_std == (0.0, 0.0, 0.0, 0.0) and obj.d == 1


def test_fused_roundtrip():
    obj = fuse(Cluster.seed(0, det(box(1, 2, 3, 4))))
    assert type(obj).from_dict(json.loads(json.dumps(obj.to_dict()))) == obj


# -- ingestion ----------------------------------------------------------------


def test_read_frames_roundtrip_and_order():
    f0 = [net(0, det(box(0, 0, 1, 1)), frame=0), net(1, frame=0)]
    f1 = [net(0, frame=1)]
    lines = [json.dumps(r) for r in predictions_to_records(f1) + predictions_to_records(f0)[::-1]]
    got = list(read_frames(lines))
    assert [fid for fid, _ in got] == [0, 1]
    assert got[0][1] == f0


def test_malformed_line_reports_number():
    lines = ['{"frame": 0, "network": 0, "detections": []}', "", '{"frame": 0, "network": 1, "detections": [{"box": [0, 0, 1]}]}']
    with pytest.raises(FormatError) as ei:
        list(read_frames(lines))
    assert ei.value.line == 3


def test_bad_json_line():
    with pytest.raises(FormatError) as ei:
        list(read_frames(["{nope"]))
    assert ei.value.line == 1


def test_score_out_of_range_rejected():
    with pytest.raises(FormatError):
        list(read_frames(['{"frame": 0, "network": 0, "detections": [{"box": [0, 0, 1, 1], "scores": [1.5]}]}']))
