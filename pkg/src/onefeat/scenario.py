"""Driving-scene data model.

Every value object here is a frozen dataclass. Units follow what the prompt
shows: speeds in km/h, accelerations in m/s^2, positions and distances in
meters. Positions are ego-centered (x forward, y positive to the left) and the
newest history point is pinned to the origin.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Any, Iterable

HISTORY_POINTS = 6
HISTORY_STEP_S = 0.4
HORIZON_POINTS = 4
SENSING_RANGE_M = 200.0


class VehicleKind(str, Enum):
    CAR = "Car"
    TRUCK = "Truck"


class Intention(IntEnum):
    KL = 0
    LC = 1
    RC = 2

    @property
    def label(self) -> str:
        return _INTENTION_LABELS[self]


_INTENTION_LABELS = {
    Intention.KL: "Keep lane",
    Intention.LC: "Left lane change",
    Intention.RC: "Right lane change",
}


class Direction(str, Enum):
    """Neighbor cells, declared in the fixed enumeration order."""

    FRONT = "Front"
    BEHIND = "Behind"
    LEFT = "Left"
    RIGHT = "Right"
    LEFT_FRONT = "LeftFront"
    LEFT_BEHIND = "LeftBehind"
    RIGHT_FRONT = "RightFront"
    RIGHT_BEHIND = "RightBehind"

    @property
    def order(self) -> int:
        return _DIRECTION_ORDER[self]


_DIRECTION_ORDER = {d: i for i, d in enumerate(Direction)}


class LanePosition(str, Enum):
    LEFTMOST = "Leftmost"
    RIGHTMOST = "Rightmost"
    MIDDLE = "Middle"


Point = tuple[float, float]


@dataclass(frozen=True)
class MapInfo:
    lane_count: int
    ego_lane: LanePosition
    # 1-based lane index counted from the left; only meaningful for MIDDLE
    ego_lane_index: int | None = None


@dataclass(frozen=True)
class EgoState:
    vx: float
    vy: float
    ax: float
    ay: float
    kind: VehicleKind
    width: float
    length: float
    history: tuple[Point, ...]


@dataclass(frozen=True)
class NeighborState:
    direction: Direction
    kind: VehicleKind
    speed_x: float
    distance: float


@dataclass(frozen=True)
class DrivingScenario:
    id: str
    map: MapInfo
    ego: EgoState
    neighbors: tuple[NeighborState, ...] = ()

    def __post_init__(self) -> None:
        # keep neighbors in the canonical direction order so equality and
        # serialization never depend on construction order
        ordered = tuple(sorted(self.neighbors, key=lambda n: n.direction.order))
        object.__setattr__(self, "neighbors", ordered)

    def neighbor(self, direction: Direction) -> NeighborState | None:
        for n in self.neighbors:
            if n.direction == direction:
                return n
        return None

    def to_dict(self) -> dict[str, Any]:
        return scenario_to_dict(self)

    def canonical_json(self) -> str:
        return canonical_json(self)


@dataclass(frozen=True)
class GroundTruth:
    intention: Intention
    trajectory: tuple[Point, ...]


@dataclass(frozen=True)
class PredictionResult:
    intention: Intention
    trajectory: tuple[Point, ...]
    thought: tuple[str, ...] | None = field(default=None)


def validate(scenario: DrivingScenario) -> list[str]:
    """Return the violated invariants; an empty list means the scenario is valid."""
    problems: list[str] = []
    m = scenario.map
    if m.lane_count < 2:
        problems.append(f"map.lane_count: {m.lane_count} < 2")
    if m.ego_lane is LanePosition.MIDDLE:
        idx = m.ego_lane_index
        if idx is None or not 1 < idx < m.lane_count:
            problems.append(
                f"map.ego_lane_index: {idx} is not a middle lane of {m.lane_count}"
            )
    elif m.ego_lane_index is not None and m.ego_lane_index != _edge_index(m):
        problems.append(f"map.ego_lane_index: {m.ego_lane_index} inconsistent with {m.ego_lane.value}")

    ego = scenario.ego
    if len(ego.history) != HISTORY_POINTS:
        problems.append(f"ego.history: history length {len(ego.history)} != {HISTORY_POINTS}")
    elif tuple(ego.history[-1]) != (0.0, 0.0):
        problems.append(f"ego.history: last point {ego.history[-1]} is not (0, 0)")
    if not ego.width > 0:
        problems.append(f"ego.width: {ego.width} must be > 0")
    if not ego.length > 0:
        problems.append(f"ego.length: {ego.length} must be > 0")

    seen: set[Direction] = set()
    for n in scenario.neighbors:
        where = f"neighbors.{n.direction.value}"
        if n.direction in seen:
            problems.append(f"{where}: more than one neighbor in this direction")
        seen.add(n.direction)
        if not n.distance > 0:
            problems.append(f"{where}.distance: {n.distance} must be > 0")
        elif n.distance > SENSING_RANGE_M:
            problems.append(
                f"{where}.distance: {n.distance} exceeds {SENSING_RANGE_M:g} m sensing range"
            )
    return problems


def _edge_index(m: MapInfo) -> int:
    return 1 if m.ego_lane is LanePosition.LEFTMOST else m.lane_count


# -- canonical JSON --------------------------------------------------------


def _num(x: float) -> float | int:
    x = float(x)
    if x == 0:
        return 0.0  # fold -0.0
    return x


def scenario_to_dict(s: DrivingScenario) -> dict[str, Any]:
    return {
        "id": s.id,
        "map": {
            "lane_count": s.map.lane_count,
            "ego_lane": s.map.ego_lane.value,
            "ego_lane_index": s.map.ego_lane_index,
        },
        "ego": {
            "vx": _num(s.ego.vx),
            "vy": _num(s.ego.vy),
            "ax": _num(s.ego.ax),
            "ay": _num(s.ego.ay),
            "kind": s.ego.kind.value,
            "width": _num(s.ego.width),
            "length": _num(s.ego.length),
            "history": [[_num(x), _num(y)] for x, y in s.ego.history],
        },
        "neighbors": [
            {
                "direction": n.direction.value,
                "kind": n.kind.value,
                "speed_x": _num(n.speed_x),
                "distance": _num(n.distance),
            }
            for n in s.neighbors
        ],
    }


def scenario_from_dict(d: dict[str, Any]) -> DrivingScenario:
    m, e = d["map"], d["ego"]
    return DrivingScenario(
        id=str(d["id"]),
        map=MapInfo(
            lane_count=int(m["lane_count"]),
            ego_lane=LanePosition(m["ego_lane"]),
            ego_lane_index=m.get("ego_lane_index"),
        ),
        ego=EgoState(
            vx=float(e["vx"]),
            vy=float(e["vy"]),
            ax=float(e["ax"]),
            ay=float(e["ay"]),
            kind=VehicleKind(e["kind"]),
            width=float(e["width"]),
            length=float(e["length"]),
            history=tuple((float(x), float(y)) for x, y in e["history"]),
        ),
        neighbors=tuple(
            NeighborState(
                direction=Direction(n["direction"]),
                kind=VehicleKind(n["kind"]),
                speed_x=float(n["speed_x"]),
                distance=float(n["distance"]),
            )
            for n in d.get("neighbors", [])
        ),
    )


def truth_to_dict(t: GroundTruth) -> dict[str, Any]:
    return {
        "intention": int(t.intention),
        "trajectory": [[_num(x), _num(y)] for x, y in t.trajectory],
    }


def truth_from_dict(d: dict[str, Any]) -> GroundTruth:
    return GroundTruth(
        intention=Intention(int(d["intention"])),
        trajectory=tuple((float(x), float(y)) for x, y in d["trajectory"]),
    )


def prediction_to_dict(p: PredictionResult) -> dict[str, Any]:
    out: dict[str, Any] = {
        "intention": int(p.intention),
        "trajectory": [[_num(x), _num(y)] for x, y in p.trajectory],
    }
    if p.thought is not None:
        out["thought"] = list(p.thought)
    return out


def prediction_from_dict(d: dict[str, Any]) -> PredictionResult:
    thought = d.get("thought")
    return PredictionResult(
        intention=Intention(int(d["intention"])),
        trajectory=tuple((float(x), float(y)) for x, y in d["trajectory"]),
        thought=None if thought is None else tuple(thought),
    )


def dumps(obj: Any) -> str:
    """Stable compact JSON used for every hashed or byte-compared artifact."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def canonical_json(s: DrivingScenario, truth: GroundTruth | None = None) -> str:
    d = scenario_to_dict(s)
    if truth is not None:
        d["truth"] = truth_to_dict(truth)
    return dumps(d)


def loads(text: str) -> tuple[DrivingScenario, GroundTruth | None]:
    d = json.loads(text)
    truth = d.get("truth")
    return scenario_from_dict(d), None if truth is None else truth_from_dict(truth)


def read_corpus(path) -> list[tuple[DrivingScenario, GroundTruth | None]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(loads(line))
    return out


def write_corpus(path, samples: Iterable[tuple[DrivingScenario, GroundTruth | None]]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for scenario, truth in samples:
            fh.write(canonical_json(scenario, truth) + "\n")
            n += 1
    return n
