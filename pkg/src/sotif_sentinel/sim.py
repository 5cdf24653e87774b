"""Closed-loop software harness for the sanitation-worker scenario.

A worker walks ahead of the ego vehicle on the right side of the lane. Each
step the perception channel (synthetic ensemble output or a recorded stream)
is fused, assessed and filtered; the planner sees the worker's ground-truth pose
together with the perceived category and, for the uncertainty-aware policy, the
entropy level. The first planned input drives an RK4 plant.
"""

from __future__ import annotations

import csv
import io
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dynamics import VehicleParams, VehicleState, integrate_step
from .entropy import EntropyConfig, EntropyReport, assess, entropy_level
from .field import CATEGORIES, PERSON, TRAFFIC_CONE, FieldParams, RoadModel
from .fusion import (
    BoundingBox,
    Detection,
    FusedObject,
    NetworkFramePredictions,
    cluster_frame,
    fuse,
    iou,
    read_frames,
)
from .planner import MPCPlanner, PlannerConfig, Policy, Reference, effective_lengths, effective_object_state, shift_warm_start

LOG_COLUMNS = (
    "t",
    "X",
    "Y",
    "u",
    "v",
    "r",
    "phi",
    "FxT",
    "delta_f",
    "E_pe_star",
    "level",
    "lambda_x",
    "lambda_y",
    "cost_total",
    "cost_field",
    "solve_ms",
)
EXTRA_COLUMNS = ("worker_X", "worker_Y", "label")

NOMINAL_BOX = BoundingBox(600.0, 300.0, 660.0, 460.0)
EVASION_THRESHOLD = 0.2  # m
COLLISION_GAP = (2.0, 1.0)  # (longitudinal, lateral) m


@dataclass(frozen=True)
class ScenarioConfig:
    v_e: float = 15.0
    v_p: float = 1.0
    x_0: float = 30.0
    y_0: float = 1.0
    dt: float = 0.033
    duration: float = 10.0
    seed: int = 0
    worker: bool = True
    perception: str = "synthetic"  # or path to detection JSONL
    filter_alpha: float = 0.3
    label_window: int = 5

    def __post_init__(self):
        if self.x_0 <= 0:
            raise ValueError("x_0 must be positive")
        if self.duration <= 0 or self.dt <= 0:
            raise ValueError("duration and dt must be positive")
        if not (0 < self.filter_alpha <= 1):
            raise ValueError("filter alpha must be in (0, 1]")

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.duration / self.dt + 1e-9))

    def worker_pose(self, t: float, road: RoadModel) -> tuple[float, float, float]:
        # y_0 is measured to the right of the ego-lane center
        return self.x_0 + self.v_p * t, road.lane_center - self.y_0, 0.0


@dataclass(frozen=True)
class CaseConfig:
    case_id: int = 2
    flip_gap: float = 20.0  # m, nominal ego-worker gap at which Case 1 relabels
    flip_gap_case2: float = 0.0  # m, Case 2 relabels only once the worker is reached
    high_scores: tuple[float, float] = (0.55, 0.45)  # (winner, runner-up)
    low_score: float = 0.95
    background: float = 0.01
    high_d: int = 4
    low_d: int = 5
    score_jitter: float = 0.2
    box_jitter: float = 0.5  # px


@dataclass(frozen=True)
class FrameSpec:
    label: int
    scores: tuple[float, ...]
    d: int


@dataclass(frozen=True)
class CaseSchedule:
    case_id: int
    frames: tuple[FrameSpec, ...]
    flip_frame: int | None


def _scores(C: int, background: float, **named: float) -> tuple[float, ...]:
    s = [background] * C
    for name, value in named.items():
        s[CATEGORIES.index(name)] = value
    return tuple(s)


def nominal_flip_frame(gap: float, sc: ScenarioConfig) -> int:
    """First frame at which the open-loop ego-worker gap falls to ``gap``."""
    closing = sc.v_e - sc.v_p
    if closing <= 0:
        return sc.n_steps
    return max(0, int(math.ceil((sc.x_0 - gap) / closing / sc.dt - 1e-9)))


def case_schedule(case: CaseConfig, sc: ScenarioConfig, ecfg: EntropyConfig) -> CaseSchedule:
    """Per-frame perception targets for the four reference cases.

    Cases 1-3 use an ambiguous person/cone score pair seen by only part of the
    ensemble (high entropy); Case 4 is a confident person seen by every network.
    Cases 1 and 2 swap the winning label at the flip frame.
    """
    cid = case.case_id
    if cid not in (1, 2, 3, 4):
        raise ValueError(f"unknown case id {cid}")
    hi, lo = case.high_scores
    bg = case.background
    C = ecfg.C
    person_amb = _scores(C, bg, person=hi, traffic_cone=lo)
    cone_amb = _scores(C, bg, traffic_cone=hi, person=lo)
    person_sure = _scores(C, bg, person=case.low_score)

    n = sc.n_steps
    if cid == 1:
        flip = nominal_flip_frame(case.flip_gap, sc)
        before, after = FrameSpec(PERSON, person_amb, case.high_d), FrameSpec(TRAFFIC_CONE, cone_amb, case.high_d)
    elif cid == 2:
        flip = nominal_flip_frame(case.flip_gap_case2, sc)
        before, after = FrameSpec(TRAFFIC_CONE, cone_amb, case.high_d), FrameSpec(PERSON, person_amb, case.high_d)
    elif cid == 3:
        flip = None
        before = after = FrameSpec(PERSON, person_amb, case.high_d)
    else:
        flip = None
        before = after = FrameSpec(PERSON, person_sure, case.low_d)

    want = 0 if cid == 4 else 2
    for spec in {before, after}:
        if spec.d < 1 or spec.d > ecfg.T:
            raise ValueError(f"detector count {spec.d} outside [1, {ecfg.T}]")
        if spec.scores.index(max(spec.scores)) != spec.label:
            raise ValueError("score template does not produce the scheduled label")
        obj = FusedObject(NOMINAL_BOX, (0.0,) * 4, spec.scores, spec.d, spec.label, max(spec.scores))
        got = assess(obj, ecfg).level
        if got != want:
            raise ValueError(f"case {cid}: template reaches level {got}, expected {want}")

    frames = tuple(after if flip is not None and k >= flip else before for k in range(n))
    return CaseSchedule(cid, frames, flip)


def synthesize_frame(
    spec: FrameSpec,
    frame_id: int,
    T: int,
    rng: np.random.Generator,
    case: CaseConfig,
) -> list[NetworkFramePredictions]:
    """Ensemble output whose cluster mean equals ``spec.scores``.

    The first ``spec.d`` networks detect the worker with zero-mean score
    perturbations that keep every network's winning label; the rest see nothing.
    """
    base = np.asarray(spec.scores, dtype=float)
    d = spec.d
    if d > 1:
        noise = rng.uniform(-1.0, 1.0, size=(d, len(base)))
        noise -= noise.mean(axis=0)
        peak = np.max(np.abs(noise), axis=0)
        peak[peak == 0] = 1.0
        top2 = np.sort(base)[-2:]
        room = min(np.min(np.minimum(base, 1 - base)), (top2[1] - top2[0]) / 2.0)
        noise *= case.score_jitter * room / peak
        scores = base[None, :] + noise
    else:
        scores = base[None, :]
    boxes = NOMINAL_BOX.as_list() + rng.uniform(-case.box_jitter, case.box_jitter, size=(d, 4))
    out = []
    for net in range(T):
        dets: tuple[Detection, ...] = ()
        if net < d:
            dets = (Detection(BoundingBox(*boxes[net]), tuple(np.clip(scores[net], 0.0, 1.0))),)
        out.append(NetworkFramePredictions(net, frame_id, dets))
    return out


def generate_case(
    case: CaseConfig,
    sc: ScenarioConfig,
    ecfg: EntropyConfig,
) -> tuple[CaseSchedule, list[list[NetworkFramePredictions]]]:
    schedule = case_schedule(case, sc, ecfg)
    rng = np.random.default_rng(sc.seed)
    frames = [synthesize_frame(spec, k, ecfg.T, rng, case) for k, spec in enumerate(schedule.frames)]
    return schedule, frames


def load_recorded_frames(path: str) -> list[list[NetworkFramePredictions]]:
    with open(path, encoding="utf-8") as fh:
        return [preds for _, preds in read_frames(fh)]


# -- tracking filter ----------------------------------------------------------


class TrackFilter:
    """EMA over penalized entropy and confidence with a majority-latched label."""

    def __init__(self, cfg: EntropyConfig, alpha: float = 0.3, window: int = 5):
        if not (0 < alpha <= 1):
            raise ValueError("alpha must be in (0, 1]")
        self.cfg = cfg
        self.alpha = alpha
        self._labels: deque[int] = deque(maxlen=window)
        self._e_star: float | None = None
        self._conf: float | None = None
        self._label: int | None = None

    def update(self, rep: EntropyReport) -> EntropyReport:
        a = self.alpha
        if self._e_star is None:
            self._e_star, self._conf = rep.E_pe_star, rep.confidence
        else:
            self._e_star = a * rep.E_pe_star + (1 - a) * self._e_star
            self._conf = a * rep.confidence + (1 - a) * self._conf
        self._labels.append(rep.winning_label)
        counts = Counter(self._labels)
        top = max(counts.values())
        tied = [lab for lab, cnt in counts.items() if cnt == top]
        if self._label not in tied:
            # most recent among the tied labels
            self._label = next(lab for lab in reversed(self._labels) if lab in tied)
        return EntropyReport(
            E_pe=rep.E_pe,
            E_pe_star=self._e_star,
            level=entropy_level(self._e_star, self.cfg),
            winning_label=self._label,
            confidence=self._conf,
            d=rep.d,
        )


def filter_track(
    reports: Iterable[EntropyReport], cfg: EntropyConfig, alpha: float = 0.3, window: int = 5
) -> list[EntropyReport]:
    f = TrackFilter(cfg, alpha, window)
    return [f.update(r) for r in reports]


def select_track(clusters_fused: Sequence[FusedObject], anchor: BoundingBox | None) -> FusedObject | None:
    """Pick the worker among fused objects: best overlap with the previous box,
    otherwise the object seen by the most networks."""
    if not clusters_fused:
        return None
    if anchor is not None:
        best = max(clusters_fused, key=lambda o: iou(o.mean_box, anchor))
        if iou(best.mean_box, anchor) > 0:
            return best
    return max(clusters_fused, key=lambda o: o.d)


# -- closed loop ----------------------------------------------------------------


@dataclass
class StepRecord:
    t: float
    state: VehicleState
    control: tuple[float, float]
    worker: tuple[float, float, float] | None
    report: EntropyReport | None
    lambdas: tuple[float, float]
    cost_total: float
    cost_field: float
    breakdown: dict
    solve_ms: float
    converged: bool

    def row(self) -> dict:
        s = self.state
        rep = self.report
        return {
            "t": self.t,
            "X": s.X,
            "Y": s.Y,
            "u": s.u,
            "v": s.v,
            "r": s.r,
            "phi": s.phi,
            "FxT": self.control[0],
            "delta_f": self.control[1],
            "E_pe_star": rep.E_pe_star if rep else float("nan"),
            "level": rep.level if rep else -1,
            "lambda_x": self.lambdas[0],
            "lambda_y": self.lambdas[1],
            "cost_total": self.cost_total,
            "cost_field": self.cost_field,
            "solve_ms": self.solve_ms,
            "worker_X": self.worker[0] if self.worker else float("nan"),
            "worker_Y": self.worker[1] if self.worker else float("nan"),
            "label": CATEGORIES[rep.winning_label] if rep and rep.winning_label < len(CATEGORIES) else "",
        }


@dataclass
class SimLog:
    dt: float
    policy: str
    case_id: int | None
    records: list[StepRecord] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([r.row()[name] for r in self.records], dtype=float)

    def to_csv(self, fh=None) -> str:
        buf = fh if fh is not None else io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = LOG_COLUMNS + EXTRA_COLUMNS
        w.writerow(cols)
        for rec in self.records:
            row = rec.row()
            w.writerow([_fmt(row[c]) for c in cols])
        return buf.getvalue() if fh is None else ""


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


class PerceptionChannel:
    """Per-frame fuse, pick the worker's cluster, assess, filter."""

    def __init__(self, frames, ecfg: EntropyConfig, sc: ScenarioConfig, threshold: float = 0.95):
        self.frames = frames
        self.ecfg = ecfg
        self.threshold = threshold
        self.filter = TrackFilter(ecfg, sc.filter_alpha, sc.label_window)
        self._anchor: BoundingBox | None = None
        self._last: EntropyReport | None = None

    def report(self, k: int) -> EntropyReport | None:
        if not self.frames:
            return self._last
        frame = self.frames[min(k, len(self.frames) - 1)]
        if k >= len(self.frames):
            return self._last
        fused = [fuse(c) for c in cluster_frame(frame, self.threshold)]
        obj = select_track(fused, self._anchor)
        if obj is None:
            return self._last
        self._anchor = obj.mean_box
        self._last = self.filter.update(assess(obj, self.ecfg))
        return self._last


def run_closed_loop(
    sc: ScenarioConfig,
    policy: Policy | str,
    *,
    vehicle: VehicleParams | None = None,
    field_params: FieldParams | None = None,
    road: RoadModel | None = None,
    planner_cfg: PlannerConfig | None = None,
    entropy_cfg: EntropyConfig | None = None,
    case: CaseConfig | None = None,
    frames: list[list[NetworkFramePredictions]] | None = None,
    affinity_threshold: float = 0.95,
) -> SimLog:
    """Simulate one scenario under one planning policy.

    ``frames`` overrides the perception source; otherwise the scenario's
    ``perception`` setting selects the synthetic case generator or a recorded
    detection file.
    """
    policy = Policy.parse(policy)
    vehicle = vehicle or VehicleParams()
    field_params = field_params or FieldParams()
    road = road or RoadModel()
    entropy_cfg = entropy_cfg or EntropyConfig()
    case = case or CaseConfig()
    planner_cfg = planner_cfg or PlannerConfig(dt=sc.dt)
    if abs(planner_cfg.dt - sc.dt) > 1e-12:
        raise ValueError("planner and scenario time steps differ")

    if sc.worker and frames is None:
        if sc.perception == "synthetic":
            _, frames = generate_case(case, sc, entropy_cfg)
        else:
            frames = load_recorded_frames(sc.perception)
    channel = PerceptionChannel(frames or [], entropy_cfg, sc, affinity_threshold) if sc.worker else None

    planner = MPCPlanner(planner_cfg, vehicle, field_params, road)
    ref = Reference(road.lane_center, sc.v_e)
    x = VehicleState(sc.v_e, Y=road.lane_center).as_array()
    u_prev = np.zeros(2)
    warm = None
    log = SimLog(sc.dt, policy.value, case.case_id if sc.worker and sc.perception == "synthetic" else None)

    for k in range(sc.n_steps):
        t = k * sc.dt
        objects = []
        worker = None
        rep = None
        lambdas = (float("nan"), float("nan"))
        if channel is not None:
            worker = sc.worker_pose(t, road)
            rep = channel.report(k)
            if rep is not None:
                obj = effective_object_state(rep, worker, policy)
                objects.append(obj)
                lambdas = effective_lengths(obj, field_params)
        plan = planner.solve(x, objects, ref, u_prev=u_prev, warm_start=warm)
        u_apply = plan.first_input
        log.records.append(
            StepRecord(
                t=t,
                state=VehicleState.from_array(x),
                control=(float(u_apply[0]), float(u_apply[1])),
                worker=worker,
                report=rep,
                lambdas=lambdas,
                cost_total=plan.cost,
                cost_field=plan.breakdown["field"],
                breakdown=dict(plan.breakdown),
                solve_ms=plan.solve_ms,
                converged=plan.converged,
            )
        )
        try:
            x = integrate_step(x, u_apply, vehicle, sc.dt)
        except ValueError as exc:
            raise RuntimeError(f"plant integration failed at t={t:.3f}s: {exc}") from exc
        if not np.all(np.isfinite(x)):
            raise RuntimeError(f"plant state diverged at t={t:.3f}s")
        u_prev = u_apply
        warm = shift_warm_start(plan)
    return log


# -- outcome --------------------------------------------------------------------


@dataclass(frozen=True)
class CaseOutcome:
    pass_distance: float | None
    pass_time: float | None
    peak_abs_Y: float
    evasion_onset: float | None
    collision: bool
    mean_solve_ms: float
    max_solve_ms: float
    p99_solve_ms: float
    min_speed: float
    complete: bool

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def compute_outcome(log: SimLog) -> CaseOutcome:
    t = log.column("t")
    X = log.column("X")
    Y = log.column("Y")
    wX = log.column("worker_X")
    wY = log.column("worker_Y")
    solve = log.column("solve_ms")
    if len(t) == 0:
        raise ValueError("empty log")
    passed = np.nonzero(X >= wX)[0]
    if len(passed):
        k = int(passed[0])
        pass_distance, pass_time = float(abs(Y[k] - wY[k])), float(t[k])
    else:
        pass_distance = pass_time = None
    moved = np.nonzero(np.abs(Y) > EVASION_THRESHOLD)[0]
    collision = bool(np.any((np.abs(X - wX) < COLLISION_GAP[0]) & (np.abs(Y - wY) < COLLISION_GAP[1])))
    return CaseOutcome(
        pass_distance=pass_distance,
        pass_time=pass_time,
        peak_abs_Y=float(np.max(np.abs(Y))),
        evasion_onset=float(t[moved[0]]) if len(moved) else None,
        collision=collision,
        mean_solve_ms=float(np.mean(solve)),
        max_solve_ms=float(np.max(solve)),
        p99_solve_ms=float(np.percentile(solve, 99)),
        min_speed=float(np.min(log.column("u"))),
        complete=pass_distance is not None,
    )


def lateral_rms_difference(a: SimLog, b: SimLog) -> float:
    n = min(len(a.records), len(b.records))
    d = a.column("Y")[:n] - b.column("Y")[:n]
    return float(np.sqrt(np.mean(d * d)))
