"""Perturbable surrounding-vehicle features and the one-feature budget."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum

from .scenario import SENSING_RANGE_M, Direction, DrivingScenario

DEFAULT_BUDGET = 0.1


class Attribute(str, Enum):
    SPEED_X = "SpeedX"
    DISTANCE = "Distance"


_FIELD = {Attribute.SPEED_X: "speed_x", Attribute.DISTANCE: "distance"}


@dataclass(frozen=True)
class FeatureId:
    direction: Direction
    attribute: Attribute
    ordinal: int

    @property
    def label(self) -> str:
        return f"{self.direction.value}.{self.attribute.value}"


@dataclass(frozen=True)
class Perturbation:
    feature: FeatureId
    delta: float


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    lo_open: bool = False

    def contains(self, v: float) -> bool:
        above = v > self.lo if self.lo_open else v >= self.lo
        return above and v <= self.hi


# SpeedX assumes same-direction traffic; Distance tops out at the sensing range.
PHYSICAL_BOUNDS = {
    Attribute.SPEED_X: Interval(0.0, 250.0),
    Attribute.DISTANCE: Interval(0.0, SENSING_RANGE_M, lo_open=True),
}


class BoundViolation(ValueError):
    def __init__(self, feature: FeatureId, value: float, lo: float, hi: float):
        self.feature, self.value, self.lo, self.hi = feature, value, lo, hi
        super().__init__(f"{feature.label}={value!r} outside [{lo!r}, {hi!r}]")


def enumerate_features(scenario: DrivingScenario) -> list[FeatureId]:
    """One feature per (present neighbor, attribute) in the fixed order.

    Ego features never appear: the attacker only controls what the ego vehicle
    senses about others.
    """
    out: list[FeatureId] = []
    for d in Direction:
        if scenario.neighbor(d) is None:
            continue
        for attr in Attribute:
            out.append(FeatureId(d, attr, len(out)))
    return out


def feature_value(scenario: DrivingScenario, feature: FeatureId) -> float:
    n = scenario.neighbor(feature.direction)
    if n is None:
        raise KeyError(f"no {feature.direction.value} neighbor in scenario {scenario.id}")
    return getattr(n, _FIELD[feature.attribute])


def bounds_for(
    scenario: DrivingScenario, feature: FeatureId, budget: float = DEFAULT_BUDGET
) -> tuple[float, float]:
    """Closed value interval reachable for ``feature`` under relative budget ``budget``.

    ``[s - budget*|s|, s + budget*|s|]`` clipped to the physical range of the
    attribute. A zero-valued feature gets the degenerate interval ``[0, 0]``.
    """
    if not 0 < budget < 1:
        raise ValueError(f"budget must lie in (0, 1), got {budget}")
    s = feature_value(scenario, feature)
    r = budget * abs(s)
    phys = PHYSICAL_BOUNDS[feature.attribute]
    lo = max(s - r, phys.lo)
    hi = min(s + r, phys.hi)
    # s itself may sit outside the physical range on malformed input; keep lo <= s <= hi
    lo, hi = min(lo, s), max(hi, s)
    return lo, hi


def delta_bounds(
    scenario: DrivingScenario, feature: FeatureId, budget: float = DEFAULT_BUDGET
) -> tuple[float, float]:
    s = feature_value(scenario, feature)
    lo, hi = bounds_for(scenario, feature, budget)
    return lo - s, hi - s


def apply(
    scenario: DrivingScenario, perturbation: Perturbation, budget: float = DEFAULT_BUDGET
) -> DrivingScenario:
    """Return a copy of ``scenario`` with one neighbor attribute shifted by ``delta``.

    Raises BoundViolation when the shifted value leaves ``bounds_for``.
    """
    feature = perturbation.feature
    s = feature_value(scenario, feature)
    lo, hi = bounds_for(scenario, feature, budget)
    value = s + perturbation.delta
    tol = 1e-9 * max(1.0, abs(s))
    if not lo - tol <= value <= hi + tol:
        raise BoundViolation(feature, value, lo, hi)
    # absorb float round-off so the stored value is inside the interval exactly
    value = min(max(value, lo), hi)
    if perturbation.delta == 0:
        value = s
    attr = _FIELD[feature.attribute]
    neighbors = tuple(
        dataclasses.replace(n, **{attr: value}) if n.direction == feature.direction else n
        for n in scenario.neighbors
    )
    return dataclasses.replace(scenario, neighbors=neighbors)
