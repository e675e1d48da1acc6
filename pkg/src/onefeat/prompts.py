"""Render scenarios into chat prompts and parse predictor answers back."""
from __future__ import annotations

import re
from enum import Enum

from .scenario import (
    Direction,
    DrivingScenario,
    Intention,
    LanePosition,
    PredictionResult,
    SENSING_RANGE_M,
)


class Mode(str, Enum):
    PLAIN = "plain"
    COT = "cot"


SYSTEM_PLAIN = """\
Role: You are an expert driving prediction model of an autonomous driving system, \
that can predict the future driving intention and future 4-second driving trajectory \
for a given ego vehicle, avoiding collision with other vehicles and obstacles on the road. Context:

- Coordinates:
Y-axis is perpendicular, and X-axis is parallel to the direction ego vehicle is facing. \
Ego vehicle’s current position is (0,0). Positive values on the y-axis represent the \
left side of the ego vehicle, and negative values on the y-axis represent the right side of the vehicle.
- Output:
 - Final Answer:
Intention: 0 (Keep lane), 1 (Left lane change), 2 (Right lane change). \
The final answer should be one of the three modes."""

_COT_CLAUSE = """
 - Thought:
Before the final answer, give the reasoning that leads to it: list each notable feature \
on its own line as "Notable features: ..." and then the expected maneuver as \
"Potential behavior: ..."."""

SYSTEM_COT = SYSTEM_PLAIN + _COT_CLAUSE

_LANE_WORDS = {2: "two", 3: "three", 4: "four", 5: "five", 6: "six", 7: "seven", 8: "eight"}
_ORDINALS = {2: "second", 3: "third", 4: "fourth", 5: "fifth", 6: "sixth", 7: "seventh"}

DIRECTION_PHRASES = {
    Direction.FRONT: "Front",
    Direction.BEHIND: "Rear",
    Direction.LEFT: "Left",
    Direction.RIGHT: "Right",
    Direction.LEFT_FRONT: "Left front",
    Direction.LEFT_BEHIND: "Left rear",
    Direction.RIGHT_FRONT: "Right front",
    Direction.RIGHT_BEHIND: "Right rear",
}


def render_system(mode: Mode | str = Mode.PLAIN) -> str:
    return SYSTEM_COT if Mode(mode) is Mode.COT else SYSTEM_PLAIN


def fmt2(x: float) -> str:
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


def fmt_distance(x: float) -> str:
    """Distances drop trailing zeros: 103 -> '103', 92.70 -> '92.7'."""
    s = fmt2(x).rstrip("0").rstrip(".")
    return "0" if s in ("", "-0") else s


def _lane_sentence(scenario: DrivingScenario) -> str:
    m = scenario.map
    n = _LANE_WORDS.get(m.lane_count, str(m.lane_count))
    if m.ego_lane is LanePosition.LEFTMOST:
        where = "the leftmost lane"
    elif m.ego_lane is LanePosition.RIGHTMOST:
        where = "the rightmost lane"
    else:
        idx = m.ego_lane_index or 2
        where = f"the {_ORDINALS.get(idx, f'#{idx}')} lane from the left"
    return f"The ego vehicle is driving on a {n}-lane highway, located at {where}."


def _point(p: tuple[float, float], pinned: bool = False) -> str:
    if pinned and p[0] == 0 and p[1] == 0:
        return "(0.0,0.0)"
    return f"({fmt2(p[0])},{fmt2(p[1])})"


def render_user(scenario: DrivingScenario) -> str:
    ego = scenario.ego
    hist = ", ".join(
        _point(p, pinned=(i == len(ego.history) - 1)) for i, p in enumerate(ego.history)
    )
    lines = [
        _lane_sentence(scenario),
        "",
        "- The information of ego vehicle is as follow:",
        f" - Velocity(km/h): v_x={fmt2(ego.vx)}, v_y={fmt2(ego.vy)};",
        f" - Acceleration(m/s^2): a_x={fmt2(ego.ax)}, a_y={fmt2(ego.ay)};",
        f" - Type: {ego.kind.value}, with width of {fmt2(ego.width)} m and length of {fmt2(ego.length)} m;",
        f" - Historical position of the last 2 seconds (One point every 0.4s): [{hist}].",
        "- The information of its surrounding vehicles "
        f"(with a range of {SENSING_RANGE_M:g}m) are listed as follow:",
    ]
    for i, n in enumerate(scenario.neighbors):
        end = "." if i == len(scenario.neighbors) - 1 else ";"
        lines.append(
            f" - {DIRECTION_PHRASES[n.direction]}: a {n.kind.value} traveling at "
            f"{fmt2(n.speed_x)} km/h of X-axis, with a distance of {fmt_distance(n.distance)} m{end}"
        )
    return "\n".join(lines)


def render(scenario: DrivingScenario, mode: Mode | str = Mode.PLAIN) -> tuple[str, str]:
    """(system, user) message pair."""
    return render_system(mode), render_user(scenario)


def normalize_ws(text: str) -> str:
    return " ".join(text.split())


# -- responses -------------------------------------------------------------


class ParseFailure(ValueError):
    """A response that could not be turned into a prediction."""

    category = "ParseFailure"


class MissingIntention(ParseFailure):
    category = "MissingIntention"


class InvalidIntentionCode(ParseFailure):
    category = "InvalidIntentionCode"


class WaypointCountMismatch(ParseFailure):
    category = "WaypointCountMismatch"

    def __init__(self, count: int):
        self.count = count
        super().__init__(f"expected 4 waypoints, found {count}")


class MalformedNumber(ParseFailure):
    category = "MalformedNumber"


_INTENTION_RE = re.compile(r"Intention\s*:\s*(.*)")
_CODE_RE = re.compile(r"^[\s$]*([+-]?\d+)(?![\d.])")
_TRAJ_RE = re.compile(r"Trajectory\s*:\s*\$?\s*\[(.*?)\]", re.S)
_TUPLE_RE = re.compile(r"\(([^()]*)\)")
_THOUGHT_RE = re.compile(r"^\s*-?\s*((?:Notable features?|Potential behaviou?rs?)\s*:.*?)\s*$")


def format_response(pred: PredictionResult) -> str:
    """Write a prediction in the answer layout the models are trained to emit."""
    out = []
    if pred.thought is not None:
        out.append("Thought:")
        out.extend(pred.thought)
    traj = ", ".join(f"({fmt2(x)},{fmt2(y)})" for x, y in pred.trajectory)
    out += [
        "Final Answer:",
        f"Intention: {int(pred.intention)}: {pred.intention.label};",
        f"Trajectory: [{traj}].",
    ]
    return "\n".join(out)


def _float(tok: str) -> float:
    tok = tok.strip().strip("$").strip()
    try:
        return float(tok)
    except ValueError:
        raise MalformedNumber(f"not a number: {tok!r}") from None


def parse_response(text: str, mode: Mode | str = Mode.PLAIN) -> PredictionResult:
    """Parse a free-form answer; strict on the payload, lenient on the prose around it.

    Thought lines are accepted on either side of the final answer.
    """
    m = _INTENTION_RE.search(text)
    if m is None:
        raise MissingIntention("no 'Intention:' line in response")
    code = _CODE_RE.match(m.group(1))
    if code is None:
        raise InvalidIntentionCode(f"no intention code in {m.group(1)!r}")
    value = int(code.group(1))
    if value not in (0, 1, 2):
        raise InvalidIntentionCode(f"intention code {value} not in 0/1/2")

    t = _TRAJ_RE.search(text)
    if t is None:
        raise WaypointCountMismatch(0)
    pairs = _TUPLE_RE.findall(t.group(1))
    if len(pairs) != 4:
        raise WaypointCountMismatch(len(pairs))
    traj = []
    for body in pairs:
        parts = body.split(",")
        if len(parts) != 2:
            raise MalformedNumber(f"waypoint ({body}) does not have two coordinates")
        traj.append((_float(parts[0]), _float(parts[1])))

    thought = None
    if Mode(mode) is Mode.COT:
        thought = tuple(
            tm.group(1).replace("$", "")
            for line in text.splitlines()
            if (tm := _THOUGHT_RE.match(line))
        )
    return PredictionResult(Intention(value), tuple(traj), thought)
