"""Scenario corpora: extraction from highD-style track CSVs and a seeded synthetic generator."""
from __future__ import annotations

import csv
import io
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Sequence

import numpy as np

from .features import Attribute, Perturbation, apply, delta_bounds, enumerate_features
from .predictor import Predictor, SurrogatePredictor
from .scenario import (
    Direction,
    DrivingScenario,
    EgoState,
    GroundTruth,
    Intention,
    LanePosition,
    MapInfo,
    NeighborState,
    VehicleKind,
    validate,
)

log = logging.getLogger(__name__)

COLUMNS = (
    "frame",
    "id",
    "x",
    "y",
    "width",
    "height",
    "xVelocity",
    "yVelocity",
    "xAcceleration",
    "yAcceleration",
    "laneId",
)
TRUCK_LENGTH_M = 8.0
KMH = 3.6


class IngestError(ValueError):
    pass


class MissingColumn(IngestError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(f"missing column {column!r}")


class NonMonotoneFrames(IngestError):
    pass


class MalformedNumber(IngestError):
    pass


@dataclass(frozen=True)
class TrackRecord:
    """One row of a highD tracks file.

    highD stores the bounding box top-left corner in ``x, y``; ``width`` is the
    box extent along the road (vehicle length) and ``height`` across it
    (vehicle width).
    """

    frame: int
    id: int
    x: float
    y: float
    width: float
    height: float
    xVelocity: float
    yVelocity: float
    xAcceleration: float
    yAcceleration: float
    laneId: int

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.width / 2, self.y + self.height / 2

    @property
    def kind(self) -> VehicleKind:
        return VehicleKind.TRUCK if self.width >= TRUCK_LENGTH_M else VehicleKind.CAR


def load_tracks(source: str | Path | IO[str]) -> dict[int, list[TrackRecord]]:
    """Parse a tracks CSV into frame-sorted records per vehicle id."""
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return load_tracks(fh)
    reader = csv.DictReader(source)
    header = reader.fieldnames or []
    for col in COLUMNS:
        if col not in header:
            raise MissingColumn(col)
    tracks: dict[int, list[TrackRecord]] = defaultdict(list)
    for row_no, row in enumerate(reader, start=2):
        vals = {}
        for col in COLUMNS:
            raw = row[col]
            try:
                vals[col] = int(raw) if col in ("frame", "id", "laneId") else float(raw)
            except (TypeError, ValueError):
                raise MalformedNumber(f"row {row_no}: column {col!r} has {raw!r}") from None
        rec = TrackRecord(**vals)
        if rec.laneId <= 0:
            raise IngestError(f"row {row_no}: laneId must be positive, got {rec.laneId}")
        track = tracks[rec.id]
        if track and rec.frame <= track[-1].frame:
            raise NonMonotoneFrames(
                f"row {row_no}: vehicle {rec.id} frame {rec.frame} after {track[-1].frame}"
            )
        track.append(rec)
    return dict(sorted(tracks.items()))


@dataclass(frozen=True)
class ExtractionConfig:
    fps: int = 25
    history_s: float = 2.0
    history_step_s: float = 0.4
    horizon_s: float = 4.0
    horizon_step_s: float = 1.0
    sensing_range: float = 200.0
    # "auto" picks left-is-decreasing for vehicles moving toward +x, as in highD
    lane_convention: str = "auto"
    # laneIds of the ego carriageway; inferred from the data when None
    lanes: tuple[int, ...] | None = None
    # lane-change anchors sit this long before the lane id flips
    lane_change_lead_s: float = 2.0
    # when set, also emit anchors every ``sliding_stride_s`` seconds
    sliding_stride_s: float | None = None
    recording: str = ""

    def __post_init__(self) -> None:
        if self.lane_convention not in ("auto", "left_decreasing", "left_increasing"):
            raise ValueError(f"unknown lane_convention {self.lane_convention!r}")
        if self.history_points != 6 or self.horizon_points != 4:
            raise ValueError("the prompt layout needs 6 history points and 4 horizon points")

    def frames(self, seconds: float) -> int:
        return int(round(seconds * self.fps))

    @property
    def history_points(self) -> int:
        return int(round(self.history_s / self.history_step_s)) + 1

    @property
    def horizon_points(self) -> int:
        return int(round(self.horizon_s / self.horizon_step_s))

    def history_offsets(self) -> list[int]:
        step = self.frames(self.history_step_s)
        return [-step * k for k in range(self.history_points - 1, -1, -1)]

    def horizon_offsets(self) -> list[int]:
        step = self.frames(self.horizon_step_s)
        return [step * k for k in range(1, self.horizon_points + 1)]


@dataclass
class ExtractionResult:
    samples: list[tuple[DrivingScenario, GroundTruth]] = field(default_factory=list)
    skipped: Counter = field(default_factory=Counter)

    def __iter__(self):
        return iter(self.samples)

    def __len__(self) -> int:
        return len(self.samples)


class _Skip(Exception):
    pass


class _Index:
    def __init__(self, tracks: dict[int, list[TrackRecord]]):
        self.tracks = tracks
        self.by_vehicle = {vid: {r.frame: r for r in recs} for vid, recs in tracks.items()}
        self.by_frame: dict[int, list[TrackRecord]] = defaultdict(list)
        for recs in tracks.values():
            for r in recs:
                self.by_frame[r.frame].append(r)
        self.lanes_by_sign: dict[int, list[int]] = defaultdict(list)
        seen: dict[int, set[int]] = defaultdict(set)
        for recs in tracks.values():
            for r in recs:
                seen[_sign(r.xVelocity)].add(r.laneId)
        for s, lanes in seen.items():
            self.lanes_by_sign[s] = sorted(lanes)


def _sign(v: float) -> int:
    return -1 if v < 0 else 1


def _left_decreasing(cfg: ExtractionConfig, sign: int) -> bool:
    if cfg.lane_convention == "auto":
        return sign > 0
    return cfg.lane_convention == "left_decreasing"


def _anchors(track: list[TrackRecord], cfg: ExtractionConfig) -> list[int]:
    anchors = []
    lead = cfg.frames(cfg.lane_change_lead_s)
    for prev, cur in zip(track, track[1:]):
        if cur.laneId != prev.laneId:
            anchors.append(cur.frame - lead)
    if not anchors:
        anchors.append(track[len(track) // 2].frame)
    if cfg.sliding_stride_s:
        first = track[0].frame - min(cfg.history_offsets())
        last = track[-1].frame - max(cfg.horizon_offsets())
        anchors.extend(range(first, last + 1, cfg.frames(cfg.sliding_stride_s)))
    return sorted(set(anchors))


def extract_at(
    index: _Index, vid: int, anchor: int, cfg: ExtractionConfig
) -> tuple[DrivingScenario, GroundTruth]:
    frames = index.by_vehicle[vid]
    need = [anchor + o for o in cfg.history_offsets() + cfg.horizon_offsets()]
    if any(f not in frames for f in need):
        raise _Skip("insufficient span")
    ego = frames[anchor]
    s = _sign(ego.xVelocity)
    cx0, cy0 = ego.center
    left_dec = _left_decreasing(cfg, s)

    def local(r: TrackRecord) -> tuple[float, float]:
        cx, cy = r.center
        return s * (cx - cx0) + 0.0, -s * (cy - cy0) + 0.0

    lanes = list(cfg.lanes) if cfg.lanes else index.lanes_by_sign[s]
    if len(lanes) < 2:
        raise _Skip("fewer than two lanes")
    if ego.laneId not in lanes:
        raise _Skip("ego lane outside carriageway")
    left_to_right = sorted(lanes, reverse=not left_dec)
    pos = left_to_right.index(ego.laneId) + 1
    if pos == 1:
        lane = MapInfo(len(lanes), LanePosition.LEFTMOST)
    elif pos == len(lanes):
        lane = MapInfo(len(lanes), LanePosition.RIGHTMOST)
    else:
        lane = MapInfo(len(lanes), LanePosition.MIDDLE, pos)

    history = tuple(local(frames[anchor + o]) for o in cfg.history_offsets())
    ego_state = EgoState(
        vx=s * ego.xVelocity * KMH + 0.0,
        vy=-s * ego.yVelocity * KMH + 0.0,
        ax=s * ego.xAcceleration + 0.0,
        ay=-s * ego.yAcceleration + 0.0,
        kind=ego.kind,
        width=ego.height,
        length=ego.width,
        history=history,
    )

    left_lane = ego.laneId - 1 if left_dec else ego.laneId + 1
    right_lane = ego.laneId + 1 if left_dec else ego.laneId - 1
    best: dict[Direction, tuple[float, NeighborState]] = {}
    for other in index.by_frame[anchor]:
        if other.id == vid or _sign(other.xVelocity) != s:
            continue
        dx, dy = local(other)
        dist = math.hypot(dx, dy)
        if not 0 < dist <= cfg.sensing_range:
            continue
        alongside = abs(dx) < (ego.width + other.width) / 2
        if other.laneId == ego.laneId:
            d = Direction.FRONT if dx >= 0 else Direction.BEHIND
        elif other.laneId == left_lane:
            d = Direction.LEFT if alongside else (
                Direction.LEFT_FRONT if dx >= 0 else Direction.LEFT_BEHIND
            )
        elif other.laneId == right_lane:
            d = Direction.RIGHT if alongside else (
                Direction.RIGHT_FRONT if dx >= 0 else Direction.RIGHT_BEHIND
            )
        else:
            continue
        if d not in best or dist < best[d][0]:
            best[d] = (dist, NeighborState(d, other.kind, s * other.xVelocity * KMH + 0.0, dist))

    intention = Intention.KL
    for f in range(anchor + 1, anchor + max(cfg.horizon_offsets()) + 1):
        r = frames.get(f)
        if r is not None and r.laneId != ego.laneId:
            went_left = (r.laneId < ego.laneId) == left_dec
            intention = Intention.LC if went_left else Intention.RC
            break
    truth = GroundTruth(intention, tuple(local(frames[anchor + o]) for o in cfg.horizon_offsets()))

    scenario = DrivingScenario(
        id=f"{cfg.recording}{vid}@{anchor}",
        map=lane,
        ego=ego_state,
        neighbors=tuple(n for _, n in best.values()),
    )
    problems = validate(scenario)
    if problems:
        raise _Skip("invalid: " + problems[0].split(":")[0])
    return scenario, truth


def extract_scenarios(
    tracks: dict[int, list[TrackRecord]], config: ExtractionConfig | None = None
) -> ExtractionResult:
    """Ego-centered (scenario, truth) samples: one per lane change, or the track midpoint."""
    cfg = config or ExtractionConfig()
    index = _Index(tracks)
    result = ExtractionResult()
    for vid, track in tracks.items():
        for anchor in _anchors(track, cfg):
            try:
                result.samples.append(extract_at(index, vid, anchor, cfg))
            except _Skip as why:
                result.skipped[str(why)] += 1
    if result.skipped:
        log.info("skipped anchors: %s", dict(result.skipped))
    return result


# -- synthetic corpora --------------------------------------------------------------


@dataclass(frozen=True)
class CorpusSpec:
    size: int = 100
    mix: tuple[float, float, float] = (0.4, 0.3, 0.3)  # KL, LC, RC
    planted_fraction: float = 0.5
    budget: float = 0.1
    # share of the planted feature's reachable interval that flips the answer
    flip_share: tuple[float, float] = (0.4, 0.48)
    # extra neighbors next to the planted left-front vehicle
    planted_extra_neighbors: tuple[int, int] = (1, 1)
    max_attempts: int = 500

    def __post_init__(self) -> None:
        if abs(sum(self.mix) - 1) > 1e-9 or min(self.mix) < 0:
            raise ValueError(f"mix must be non-negative and sum to 1, got {self.mix}")
        if not 0 <= self.planted_fraction <= 1:
            raise ValueError("planted_fraction must lie in [0, 1]")


# The bundled attack-evaluation corpus: few, stealthy plants (clean values
# sit just across the boundary) so that an unoptimized single draw rarely
# lands on one while a 55-query search usually does.
PLANTED_CORPUS = CorpusSpec(size=100, planted_fraction=0.15)
PLANTED_SEED = 7


def allocate(size: int, shares: Sequence[float]) -> list[int]:
    """Largest-remainder split of ``size`` by ``shares``."""
    raw = [size * s for s in shares]
    counts = [int(math.floor(r)) for r in raw]
    order = sorted(range(len(shares)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: size - sum(counts)]:
        counts[i] += 1
    return counts


def flippable_features(
    scenario: DrivingScenario, predictor: Predictor, budget: float, steps: int = 41
) -> list[str]:
    """Labels of features whose in-budget grid values change the predicted intention."""
    clean = predictor.predict(scenario).intention
    out = []
    for feat in enumerate_features(scenario):
        lo, hi = delta_bounds(scenario, feat, budget)
        for j in range(steps):
            d = lo + (hi - lo) * j / (steps - 1)
            if predictor.predict(apply(scenario, Perturbation(feat, d), budget)).intention != clean:
                out.append(feat.label)
                break
    return out


def _r2(x: float) -> float:
    return round(float(x), 2) + 0.0


def _with_distance(s: DrivingScenario, direction: Direction, distance: float) -> DrivingScenario:
    return replace(
        s,
        neighbors=tuple(
            replace(n, distance=distance) if n.direction == direction else n for n in s.neighbors
        ),
    )


class _Generator:
    def __init__(self, spec: CorpusSpec, seed: int, predictor: Predictor):
        self.spec = spec
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.predictor = predictor

    def _ego(self, vy: float) -> EgoState:
        rng = self.rng
        truck = rng.random() < 0.1
        vx = rng.uniform(60, 95) if truck else rng.uniform(75, 130)
        ts = (-2.0, -1.6, -1.2, -0.8, -0.4)
        history = tuple((_r2(vx / KMH * t), _r2(vy / KMH * t)) for t in ts) + ((0.0, 0.0),)
        return EgoState(
            vx=_r2(vx),
            vy=_r2(vy),
            ax=_r2(rng.uniform(-1.0, 1.0)),
            ay=_r2(rng.uniform(-0.5, 0.5)),
            kind=VehicleKind.TRUCK if truck else VehicleKind.CAR,
            width=_r2(rng.uniform(2.4, 2.6) if truck else rng.uniform(1.8, 2.1)),
            length=_r2(rng.uniform(12, 18) if truck else rng.uniform(4.2, 5.0)),
            history=history,
        )

    def _neighbor(self, d: Direction, ego_vx: float) -> NeighborState:
        rng = self.rng
        kind = VehicleKind.TRUCK if rng.random() < 0.15 else VehicleKind.CAR
        speed = min(max(ego_vx + rng.uniform(-20, 20), 40.0), 200.0)
        near = d in (Direction.LEFT, Direction.RIGHT)
        dist = rng.uniform(2, 6) if near else rng.uniform(15, 190)
        return NeighborState(d, kind, _r2(speed), _r2(dist))

    def _map(self, target: Intention) -> MapInfo:
        rng = self.rng
        n = int(rng.integers(2, 6))
        choices = [LanePosition.LEFTMOST, LanePosition.RIGHTMOST] + (
            [LanePosition.MIDDLE] if n > 2 else []
        )
        if target is Intention.LC and LanePosition.LEFTMOST in choices:
            choices.remove(LanePosition.LEFTMOST)
        if target is Intention.RC and LanePosition.RIGHTMOST in choices:
            choices.remove(LanePosition.RIGHTMOST)
        pos = choices[int(rng.integers(len(choices)))]
        idx = int(rng.integers(2, n)) if pos is LanePosition.MIDDLE else None
        return MapInfo(n, pos, idx)

    def _vy(self, target: Intention, lateral: bool) -> float:
        rng = self.rng
        if target is Intention.RC:
            return rng.uniform(-5, -1.5)
        if target is Intention.LC or lateral:
            return rng.uniform(1.5, 5)
        return rng.uniform(-0.6, 0.6)

    def _label(self, s: DrivingScenario) -> GroundTruth:
        p = self.predictor.predict(s)
        return GroundTruth(p.intention, p.trajectory)

    def ordinary(self, sid: str, target: Intention) -> tuple[DrivingScenario, GroundTruth]:
        spec = self.spec
        for _ in range(spec.max_attempts):
            k = int(self.rng.integers(1, 5))
            all_dirs = list(Direction)
            dirs = [all_dirs[i] for i in sorted(self.rng.choice(len(all_dirs), size=k, replace=False))]
            ego = self._ego(self._vy(target, lateral=False))
            s = DrivingScenario(sid, self._map(target), ego, tuple(self._neighbor(d, ego.vx) for d in dirs))
            truth = self._label(s)
            if truth.intention is not target:
                continue
            if flippable_features(s, self.predictor, spec.budget):
                continue
            return s, truth
        raise RuntimeError(f"could not generate an ordinary {target.name} scenario")

    def planted(self, sid: str, target: Intention) -> tuple[DrivingScenario, GroundTruth]:
        """Left-front gap placed just across the predictor's accept/reject boundary."""
        spec, rng = self.spec, self.rng
        lf = Direction.LEFT_FRONT
        others = [d for d in Direction if d not in (lf, Direction.LEFT)]
        target_label = f"{lf.value}.{Attribute.DISTANCE.value}"
        for _ in range(spec.max_attempts):
            k = int(rng.integers(spec.planted_extra_neighbors[0], spec.planted_extra_neighbors[1] + 1))
            dirs = [lf] + [others[i] for i in rng.choice(len(others), size=k, replace=False)]
            ego = self._ego(self._vy(target, lateral=True))
            neighbors = [self._neighbor(d, ego.vx) for d in dirs]
            s = DrivingScenario(sid, self._map(Intention.LC), ego, tuple(neighbors))
            far = _with_distance(s, lf, 190.0)
            near = _with_distance(s, lf, 1.0)
            if self.predictor.predict(far).intention is not Intention.LC:
                continue
            if self.predictor.predict(near).intention is Intention.LC:
                continue
            lo, hi = 1.0, 190.0  # answer is LC at hi, not at lo
            for _ in range(40):
                mid = (lo + hi) / 2
                if self.predictor.predict(_with_distance(s, lf, mid)).intention is Intention.LC:
                    hi = mid
                else:
                    lo = mid
            boundary = hi
            share = rng.uniform(*spec.flip_share)
            b = spec.budget
            if target is Intention.LC:
                gap = boundary / (1 - b + 2 * b * share)
            else:
                gap = boundary / (1 + b - 2 * b * share)
            if not 0 < gap <= 200:
                continue
            s = _with_distance(s, lf, _r2(gap))
            truth = self._label(s)
            if truth.intention is not target:
                continue
            if flippable_features(s, self.predictor, b) != [target_label]:
                continue
            return s, truth
        raise RuntimeError(f"could not plant a {target.name} scenario")


def generate_synthetic(
    spec: CorpusSpec | None = None,
    seed: int = 0,
    predictor: Predictor | None = None,
) -> list[tuple[DrivingScenario, GroundTruth]]:
    """Seeded corpus labeled by ``predictor`` (the surrogate by default).

    Planted samples carry a left-front gap whose reachable range straddles the
    predictor's decision boundary; every other sample is checked to have no
    in-budget intention flip at all. The predictor is only ever queried.
    """
    spec = spec or CorpusSpec()
    predictor = predictor or SurrogatePredictor()
    gen = _Generator(spec, seed, predictor)
    n_kl, n_lc, n_rc = allocate(spec.size, spec.mix)
    n_planted = int(round(spec.size * spec.planted_fraction))
    if n_planted > n_kl + n_lc:
        raise ValueError("planted fraction exceeds the KL + LC share of the mix")
    p_lc = min(n_lc, n_planted - n_planted // 2)
    p_kl = min(n_kl, n_planted - p_lc)
    p_lc = n_planted - p_kl

    plan: list[tuple[Intention, bool]] = (
        [(Intention.LC, True)] * p_lc
        + [(Intention.KL, True)] * p_kl
        + [(Intention.LC, False)] * (n_lc - p_lc)
        + [(Intention.KL, False)] * (n_kl - p_kl)
        + [(Intention.RC, False)] * n_rc
    )
    order = gen.rng.permutation(len(plan))
    out = []
    for i, j in enumerate(order):
        target, planted = plan[j]
        sid = f"syn{seed}-{i:04d}"
        out.append(gen.planted(sid, target) if planted else gen.ordinary(sid, target))
    return out


def tracks_csv(records: Sequence[TrackRecord]) -> str:
    """Serialize records back to the tracks CSV layout (handy for fixtures)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in records:
        w.writerow([getattr(r, c) for c in COLUMNS])
    return buf.getvalue()
