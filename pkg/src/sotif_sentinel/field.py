"""Class- and uncertainty-aware artificial potential fields.

Each perceived object carries an anisotropic (optionally super-) Gaussian
hazard whose characteristic lengths grow with the object's entropy level.
Road boundaries add a one-sided quadratic penalty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

CATEGORIES = (
    "car",
    "bus",
    "truck",
    "train",
    "bike",
    "motor",
    "person",
    "rider",
    "traffic_sign",
    "traffic_light",
    "traffic_cone",
)
PERSON = CATEGORIES.index("person")
TRAFFIC_CONE = CATEGORIES.index("traffic_cone")

FD_STEP = 1e-4
CONE_INTENSITY = 2.0


@dataclass(frozen=True)
class CategoryFieldParams:
    a: float = 50.0  # intensity [cost]
    b: float = 1.0  # shape exponent
    L_x: float = 15.0  # [m]
    L_y: float = 1.5  # [m]

    def __post_init__(self):
        if min(self.a, self.b, self.L_x, self.L_y) <= 0:
            raise ValueError(f"field parameters must be positive: {self}")


def default_category_params() -> dict[int, CategoryFieldParams]:
    # person largest, then two-wheelers, then vehicles, then cones and signs
    table = {
        # name: (a, L_x, L_y)
        "car": (30.0, 12.0, 1.0),
        "bus": (30.0, 12.0, 1.0),
        "truck": (30.0, 12.0, 1.0),
        "train": (30.0, 12.0, 1.0),
        "bike": (40.0, 13.0, 1.2),
        "motor": (40.0, 13.0, 1.2),
        "person": (50.0, 15.0, 1.5),
        "rider": (40.0, 13.0, 1.2),
        "traffic_sign": (CONE_INTENSITY, 8.0, 0.5),
        "traffic_light": (CONE_INTENSITY, 8.0, 0.5),
        "traffic_cone": (CONE_INTENSITY, 8.0, 0.5),
    }
    return {CATEGORIES.index(k): CategoryFieldParams(a=a, L_x=lx, L_y=ly) for k, (a, lx, ly) in table.items()}


@dataclass(frozen=True)
class SafetyMargins:
    U_x: float = 8.0
    U_y: float = 1.0

    def __post_init__(self):
        if self.U_x < 0 or self.U_y < 0:
            raise ValueError("safety margins must be non-negative")


@dataclass(frozen=True)
class RoadModel:
    """Straight road along +X. The default band is the ego lane (centered on
    Y=0) plus one lane to its left."""

    Y_right: float = -1.75
    Y_left: float = 5.25
    a_q: float = 10.0
    D_a: float = 1.0
    lane_width: float = 3.5
    lane_center: float = 0.0

    def __post_init__(self):
        if not self.Y_right < self.Y_left:
            raise ValueError("Y_right must be below Y_left")
        if self.D_a <= 0 or self.a_q <= 0:
            raise ValueError("a_q and D_a must be positive")


@dataclass(frozen=True)
class FieldParams:
    categories: Mapping[int, CategoryFieldParams] = field(default_factory=default_category_params)
    margins: SafetyMargins = field(default_factory=SafetyMargins)
    person: int = PERSON

    def for_category(self, c: int) -> CategoryFieldParams:
        # unmodeled categories are treated as persons (most conservative)
        return self.categories.get(c, self.categories[self.person])

    def scaled(self, k: float) -> "FieldParams":
        cats = {c: replace(p, a=p.a * k) for c, p in self.categories.items()}
        return replace(self, categories=cats)


@dataclass(frozen=True)
class PerceivedObjectState:
    id: int
    category: int
    x: float
    y: float
    heading: float = 0.0
    level: int = 0

    def __post_init__(self):
        if self.level not in (0, 1, 2):
            raise ValueError(f"invalid entropy level {self.level}")
        if not all(math.isfinite(v) for v in (self.x, self.y, self.heading)):
            raise ValueError("object pose must be finite")


def uncertainty_expansion(c: int, level: int, params: FieldParams) -> tuple[float, float]:
    """Extra field extent ``(E_x, E_y)`` for category ``c`` at entropy ``level``.

    Medium uncertainty grows any category up to the person footprint; high
    uncertainty adds the safety margins on top of that.
    """
    if level == 0:
        return 0.0, 0.0
    p = params.for_category(c)
    person = params.categories[params.person]
    ex = person.L_x - p.L_x
    ey = person.L_y - p.L_y
    if level == 1:
        return ex, ey
    if level == 2:
        return ex + params.margins.U_x, ey + params.margins.U_y
    raise ValueError(f"invalid entropy level {level}")


def characteristic_lengths(c: int, level: int, params: FieldParams) -> tuple[float, float]:
    p = params.for_category(c)
    ex, ey = uncertainty_expansion(c, level, params)
    return p.L_x + ex, p.L_y + ey


def field_shape(c: int, level: int, params: FieldParams) -> CategoryFieldParams:
    """Intensity and shape used for category ``c`` at ``level``. Any raised
    level falls back to the person standard."""
    if level == 0:
        return params.for_category(c)
    return params.categories[params.person]


def _object_terms(X, Y, obj: PerceivedObjectState, params: FieldParams):
    p = field_shape(obj.category, obj.level, params)
    lx, ly = characteristic_lengths(obj.category, obj.level, params)
    ct, st = math.cos(obj.heading), math.sin(obj.heading)
    dx = X - obj.x
    dy = Y - obj.y
    s = dx * ct + dy * st  # along object heading
    n = -dx * st + dy * ct  # across
    q = s * s / (2.0 * lx * lx) + n * n / (2.0 * ly * ly)
    return p, lx, ly, ct, st, s, n, q


def object_field(X, Y, obj: PerceivedObjectState, params: FieldParams):
    """Hazard ``a * exp(-q**b)`` with ``q`` the rotated anisotropic quadratic
    form. Accepts scalars or numpy arrays for ``X``, ``Y``."""
    p, _, _, _, _, _, _, q = _object_terms(X, Y, obj, params)
    if p.b == 1.0:
        return p.a * np.exp(-q)
    return p.a * np.exp(-np.power(q, p.b))


def road_field(X, Y, road: RoadModel):
    s = np.minimum(np.asarray(Y, dtype=float) - road.Y_right, road.Y_left - np.asarray(Y, dtype=float))
    gap = np.minimum(s - road.D_a, 0.0)
    out = road.a_q * gap * gap
    return float(out) if np.ndim(out) == 0 else out


def total_field(X, Y, objects: Sequence[PerceivedObjectState], road: RoadModel | None, params: FieldParams):
    val = 0.0 if road is None else road_field(X, Y, road)
    for obj in objects:
        val = val + object_field(X, Y, obj, params)
    return val


def _road_grad_hess(Y: float, road: RoadModel) -> tuple[float, float]:
    s_r = Y - road.Y_right
    s_l = road.Y_left - Y
    if s_r <= s_l:
        if s_r <= road.D_a:
            return 2.0 * road.a_q * (s_r - road.D_a), 2.0 * road.a_q
        return 0.0, 0.0
    if s_l <= road.D_a:
        return -2.0 * road.a_q * (s_l - road.D_a), 2.0 * road.a_q
    return 0.0, 0.0


def _object_grad_hess(X: float, Y: float, obj: PerceivedObjectState, params: FieldParams):
    p, lx, ly, ct, st, s, n, q = _object_terms(X, Y, obj, params)
    # dq/dX, dq/dY
    qs = s / (lx * lx)
    qn = n / (ly * ly)
    qX = qs * ct - qn * st
    qY = qs * st + qn * ct
    qXX = ct * ct / (lx * lx) + st * st / (ly * ly)
    qYY = st * st / (lx * lx) + ct * ct / (ly * ly)
    val = p.a * math.exp(-q)
    gX, gY = -val * qX, -val * qY
    hXX = val * (qX * qX - qXX)
    hYY = val * (qY * qY - qYY)
    return val, gX, gY, hXX, hYY


def field_gradient(
    X: float,
    Y: float,
    objects: Sequence[PerceivedObjectState],
    road: RoadModel | None,
    params: FieldParams,
) -> tuple[float, float]:
    """Analytic gradient for Gaussian-shaped objects (b=1), central differences
    otherwise."""
    gX = gY = 0.0
    if road is not None:
        gY += _road_grad_hess(Y, road)[0]
    for obj in objects:
        if field_shape(obj.category, obj.level, params).b == 1.0:
            _, ox, oy, _, _ = _object_grad_hess(X, Y, obj, params)
        else:
            h = FD_STEP
            ox = (object_field(X + h, Y, obj, params) - object_field(X - h, Y, obj, params)) / (2 * h)
            oy = (object_field(X, Y + h, obj, params) - object_field(X, Y - h, obj, params)) / (2 * h)
        gX += float(ox)
        gY += float(oy)
    return gX, gY


def field_value_grad_hess(
    X: float,
    Y: float,
    objects: Sequence[PerceivedObjectState],
    road: RoadModel | None,
    params: FieldParams,
) -> tuple[float, float, float, float, float]:
    """Value, gradient and diagonal second derivatives ``(PF, dX, dY, dXX, dYY)``.

    Second derivatives are analytic for b=1 objects and the road; non-Gaussian
    objects fall back to central second differences.
    """
    v = gX = gY = hXX = hYY = 0.0
    if road is not None:
        v += road_field(X, Y, road)
        g, hh = _road_grad_hess(Y, road)
        gY += g
        hYY += hh
    for obj in objects:
        if field_shape(obj.category, obj.level, params).b == 1.0:
            ov, ox, oy, oxx, oyy = _object_grad_hess(X, Y, obj, params)
        else:
            h = FD_STEP
            f = lambda x, y: float(object_field(x, y, obj, params))  # noqa: E731
            ov = f(X, Y)
            fxp, fxm, fyp, fym = f(X + h, Y), f(X - h, Y), f(X, Y + h), f(X, Y - h)
            ox, oy = (fxp - fxm) / (2 * h), (fyp - fym) / (2 * h)
            oxx, oyy = (fxp - 2 * ov + fxm) / (h * h), (fyp - 2 * ov + fym) / (h * h)
        v += ov
        gX += ox
        gY += oy
        hXX += oxx
        hYY += oyy
    return v, gX, gY, hXX, hYY


def rasterize(
    objects: Sequence[PerceivedObjectState],
    road: RoadModel | None,
    params: FieldParams,
    x_range: tuple[float, float],
    y_range: tuple[float, float],
    step: float,
):
    """Grid samples ``(X, Y, PF)`` as three flat arrays, X varying slowest."""
    xs = np.arange(x_range[0], x_range[1] + step / 2, step)
    ys = np.arange(y_range[0], y_range[1] + step / 2, step)
    XX, YY = np.meshgrid(xs, ys, indexing="ij")
    PF = np.asarray(total_field(XX, YY, objects, road, params), dtype=float) * np.ones_like(XX)
    return XX.ravel(), YY.ravel(), PF.ravel()
