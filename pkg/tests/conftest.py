import numpy as np
import pytest

from sotif_sentinel.fusion import BoundingBox, Detection, NetworkFramePredictions, argmax, iou

C = 11


def random_frame(rng: np.random.Generator, T: int = 5, n_proto: int = 4, max_per_net: int = 4, frame_id: int = 0):
    """Ensemble output drawn around a few prototype objects so that clusters of
    every size occur. Jitter is small enough that many boxes pass a 0.95 IoU."""
    protos = []
    for _ in range(n_proto):
        x1, y1 = rng.uniform(0, 500, size=2)
        w, h = rng.uniform(40, 200, size=2)
        protos.append((x1, y1, w, h, int(rng.integers(0, 3))))
    frame = []
    for net in range(T):
        dets = []
        for _ in range(int(rng.integers(0, max_per_net + 1))):
            x1, y1, w, h, lab = protos[int(rng.integers(0, n_proto))]
            j = rng.normal(0, 0.6, size=4)
            box = BoundingBox(x1 + j[0], y1 + j[1], x1 + w + j[2], y1 + h + j[3])
            scores = rng.uniform(0, 0.3, size=C)
            label = lab if rng.random() > 0.1 else int(rng.integers(0, C))
            scores[label] = rng.uniform(0.5, 1.0)
            dets.append(Detection(box, tuple(scores)))
        frame.append(NetworkFramePredictions(net, frame_id, tuple(dets)))
    return frame


# -- reference: straight transcription of the sequential clustering loop -------


def reference_clusters(frame, theta):
    """Clusters as lists of (network, index) pairs. Representatives and labels
    are recomputed from scratch every time."""

    def rep(members):
        boxes = [frame_by_net[n].detections[i].box.as_list() for n, i in members]
        return BoundingBox(*[sum(c) / len(boxes) for c in zip(*boxes)])

    def label(members):
        sc = [frame_by_net[n].detections[i].scores for n, i in members]
        return argmax([sum(c) / len(sc) for c in zip(*sc)])

    frame_by_net = {p.network_id: p for p in frame}
    order = sorted(frame_by_net)
    if not order:
        return []
    clusters = [[(order[0], i)] for i in range(len(frame_by_net[order[0]].detections))]
    for t in order[1:]:
        flags = [0] * len(clusters)
        for i, d in enumerate(frame_by_net[t].detections):
            placed = False
            for k in range(len(flags)):
                if flags[k] == 0 and label(clusters[k]) == d.winning_label and iou(d.box, rep(clusters[k])) >= theta:
                    clusters[k].append((t, i))
                    flags[k] = 1
                    placed = True
                    break
            if not placed:
                clusters.append([(t, i)])
    return clusters


def as_index_pairs(frame, clusters):
    lookup = {}
    for p in frame:
        for i, d in enumerate(p.detections):
            lookup[id(d)] = (p.network_id, i)
    return [[lookup[id(d)] for _, d in c.members] for c in clusters]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: list[str] = []


def pytest_runtest_logreport(report):
    if report.when == "call":
        _CRITERIA.extend(line for line in report.capstdout.splitlines() if line.startswith("CRITERION"))


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
