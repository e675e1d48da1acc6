"""Query-only predictors.

A predictor exposes ``predict(scenario)`` and nothing else an attacker could
use: no gradients, no parameters. Three implementations live here:

* :class:`SurrogatePredictor`, a deterministic gap-acceptance rule set that
  stands in for a fine-tuned LLM at desk scale;
* :class:`RemotePredictor`, a chat-completion client for a served model;
* :class:`CachedPredictor`, a memoizing wrapper for deterministic predictors.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import socket
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Callable

from .prompts import Mode, ParseFailure, format_response, parse_response, render
from .scenario import (
    Direction,
    DrivingScenario,
    EgoState,
    Intention,
    PredictionResult,
    canonical_json,
)

log = logging.getLogger(__name__)

LANE_WIDTH_M = 3.5
HORIZON_S = (1.0, 2.0, 3.0, 4.0)

ENV_ENDPOINT = "ONEFEAT_ENDPOINT"
ENV_TOKEN = "ONEFEAT_API_TOKEN"


class TransportError(RuntimeError):
    """The endpoint could not be asked; retriable and never scored as an attack success."""


class EndpointTimeout(TransportError):
    """No answer in time, or the host could not be reached at all."""


class HTTPStatusError(TransportError):
    def __init__(self, code: int, body: str = ""):
        self.code = code
        super().__init__(f"HTTP {code}: {body[:200]}")


def scenario_hash(scenario: DrivingScenario) -> str:
    return hashlib.sha256(canonical_json(scenario).encode()).hexdigest()


@dataclass(frozen=True)
class QueryRecord:
    scenario_hash: str
    prompt_hash: str
    raw_response: str
    outcome: str  # "ok", a parse-failure category, or "transport"
    latency: float
    cache_hit: bool = False


class QueryLog:
    """Append-only, thread-safe sink of query records."""

    def __init__(self) -> None:
        self._records: list[QueryRecord] = []
        self._lock = threading.Lock()

    def append(self, record: QueryRecord) -> None:
        with self._lock:
            self._records.append(record)

    @property
    def records(self) -> tuple[QueryRecord, ...]:
        with self._lock:
            return tuple(self._records)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def misses(self) -> int:
        with self._lock:
            return sum(not r.cache_hit for r in self._records)


def _prompt_hash(scenario: DrivingScenario, mode: Mode) -> str:
    system, user = render(scenario, mode)
    return hashlib.sha256((system + "\x00" + user).encode()).hexdigest()


class Predictor:
    """Black-box contract. Subclasses implement ``_predict``."""

    mode: Mode = Mode.PLAIN
    max_concurrency: int = 1
    deterministic: bool = True

    def __init__(self, mode: Mode | str = Mode.PLAIN, log: QueryLog | None = None):
        self.mode = Mode(mode)
        self.log = log

    def _predict(self, scenario: DrivingScenario) -> tuple[PredictionResult, str | None]:
        raise NotImplementedError

    def predict(self, scenario: DrivingScenario) -> PredictionResult:
        t0 = time.perf_counter()
        raw: str | None = None
        result: PredictionResult | None = None
        outcome = "ok"
        try:
            result, raw = self._predict(scenario)
            return result
        except ParseFailure as exc:
            outcome = exc.category
            raw = getattr(exc, "raw", raw)
            raise
        except TransportError:
            outcome = "transport"
            raise
        finally:
            if self.log is not None:
                if raw is None and result is not None:
                    raw = format_response(result)
                self.log.append(
                    QueryRecord(
                        scenario_hash(scenario),
                        _prompt_hash(scenario, self.mode),
                        raw or "",
                        outcome,
                        time.perf_counter() - t0,
                    )
                )

    __call__ = predict


# -- surrogate ---------------------------------------------------------------


@dataclass(frozen=True)
class SurrogateParams:
    lateral_speed: float = 1.0  # km/h
    front_gap: float = 50.0  # m
    adjacent_front_gap: float = 70.0  # m
    adjacent_rear_gap: float = 30.0  # m
    speed_advantage: float = 5.0  # km/h

    def __post_init__(self) -> None:
        for name, v in vars(self).items():
            if not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")


def surrogate_trajectory(
    ego: EgoState, intention: Intention, lane_width: float = LANE_WIDTH_M
) -> tuple[tuple[float, float], ...]:
    """Constant-acceleration longitudinal extrapolation plus a smoothstep lane shift."""
    v = ego.vx / 3.6
    sign = {Intention.KL: 0.0, Intention.LC: 1.0, Intention.RC: -1.0}[intention]
    out = []
    for t in HORIZON_S:
        u = t / HORIZON_S[-1]
        out.append((v * t + 0.5 * ego.ax * t * t, sign * lane_width * (3 * u * u - 2 * u**3)))
    return tuple(out)


class SurrogatePredictor(Predictor):
    """Gap-acceptance rules over the prompt-visible values.

    Inputs are rounded to the two decimals the prompt shows, so perturbations
    finer than the rendering are invisible here just as they are to a language
    model reading the text.
    """

    deterministic = True

    def __init__(
        self,
        params: SurrogateParams | None = None,
        mode: Mode | str = Mode.PLAIN,
        log: QueryLog | None = None,
        lane_width: float = LANE_WIDTH_M,
    ):
        super().__init__(mode, log)
        self.params = params or SurrogateParams()
        self.lane_width = lane_width
        self.max_concurrency = 64

    def _gaps_admit(self, scenario: DrivingScenario, front: Direction, rear: Direction) -> bool:
        p = self.params
        f = scenario.neighbor(front)
        r = scenario.neighbor(rear)
        return (f is None or round(f.distance, 2) >= p.adjacent_front_gap) and (
            r is None or round(r.distance, 2) >= p.adjacent_rear_gap
        )

    def decide(self, scenario: DrivingScenario) -> tuple[Intention, list[str]]:
        p = self.params
        ego = scenario.ego
        vy, vx = round(ego.vy, 2), round(ego.vx, 2)
        notes: list[str] = []
        left_ok = self._gaps_admit(scenario, Direction.LEFT_FRONT, Direction.LEFT_BEHIND)
        if vy > p.lateral_speed:
            notes.append(f"Notable features: v_y = {vy:.2f};")
            if left_ok:
                notes.append("Notable feature: Left front is free;")
                return Intention.LC, notes
            notes.append("Notable feature: Left lane is blocked;")
        elif vy < -p.lateral_speed:
            notes.append(f"Notable features: v_y = {vy:.2f};")
            if self._gaps_admit(scenario, Direction.RIGHT_FRONT, Direction.RIGHT_BEHIND):
                notes.append("Notable feature: Right front is free;")
                return Intention.RC, notes
            notes.append("Notable feature: Right lane is blocked;")
        front = scenario.neighbor(Direction.FRONT)
        if (
            front is not None
            and round(front.distance, 2) < p.front_gap
            and round(front.speed_x, 2) <= vx - p.speed_advantage
            and left_ok
        ):
            notes.append("Notable feature: Slower vehicle ahead;")
            notes.append("Notable feature: Left front is free;")
            return Intention.LC, notes
        return Intention.KL, notes

    def _predict(self, scenario: DrivingScenario) -> tuple[PredictionResult, None]:
        intention, notes = self.decide(scenario)
        traj = tuple(
            (round(x, 2) + 0.0, round(y, 2) + 0.0)
            for x, y in surrogate_trajectory(scenario.ego, intention, self.lane_width)
        )
        thought = None
        if self.mode is Mode.COT:
            behavior = {
                Intention.KL: "Potential behavior: Keep the current lane.",
                Intention.LC: "Potential behavior: Change left to the fast lane.",
                Intention.RC: "Potential behavior: Change right to the slow lane.",
            }[intention]
            thought = tuple(notes) + (behavior,)
        return PredictionResult(intention, traj, thought), None


# -- remote ------------------------------------------------------------------


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model: str = "default"
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0
    backoff: float = 0.5
    token: str | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if not self.timeout > 0:
            raise ValueError("timeout must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    @classmethod
    def from_env(cls, base_url: str | None = None, **kw) -> "EndpointConfig":
        url = os.environ.get(ENV_ENDPOINT) or base_url
        if not url:
            raise ValueError(f"no endpoint URL (set --endpoint or {ENV_ENDPOINT})")
        token = os.environ.get(ENV_TOKEN, kw.pop("token", None))
        return cls(base_url=url, token=token, **kw)

    @property
    def url(self) -> str:
        base = self.base_url.rstrip("/")
        return base if base.endswith("/chat/completions") else base + "/chat/completions"


def chat_request_body(system: str, user: str, endpoint: EndpointConfig) -> dict:
    return {
        "model": endpoint.model,
        "temperature": endpoint.temperature,
        "messages": [
            {"role": "system", "content": system},
            {"role": "user", "content": user},
        ],
    }


def _assistant_text(payload: dict) -> str:
    try:
        return payload["choices"][0]["message"]["content"] or ""
    except (KeyError, IndexError, TypeError):
        raise HTTPStatusError(200, f"unexpected response shape: {json.dumps(payload)[:200]}")


def _post(endpoint: EndpointConfig, body: dict) -> dict:
    data = json.dumps(body).encode()
    headers = {"Content-Type": "application/json"}
    if endpoint.token:
        headers["Authorization"] = f"Bearer {endpoint.token}"
    req = urllib.request.Request(endpoint.url, data=data, headers=headers, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=endpoint.timeout) as resp:
            return json.loads(resp.read().decode())
    except urllib.error.HTTPError as exc:
        raise HTTPStatusError(exc.code, exc.read().decode(errors="replace")) from None
    except (urllib.error.URLError, socket.timeout, ConnectionError, TimeoutError) as exc:
        raise EndpointTimeout(f"{endpoint.url}: {exc}") from None


def _retriable(exc: TransportError) -> bool:
    if isinstance(exc, HTTPStatusError):
        return exc.code == 429 or exc.code >= 500
    return True


def remote_predict(
    scenario: DrivingScenario,
    endpoint: EndpointConfig,
    mode: Mode | str = Mode.PLAIN,
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[PredictionResult, str]:
    """Send one scenario to a chat-completion endpoint; return (result, raw text)."""
    system, user = render(scenario, mode)
    body = chat_request_body(system, user, endpoint)
    attempt = 0
    while True:
        try:
            payload = _post(endpoint, body)
            break
        except TransportError as exc:
            if attempt >= endpoint.max_retries or not _retriable(exc):
                raise
            wait = endpoint.backoff * 2**attempt
            log.warning("query failed (%s); retry %d in %.1fs", exc, attempt + 1, wait)
            sleep(wait)
            attempt += 1
    text = _assistant_text(payload)
    try:
        return parse_response(text, mode), text
    except ParseFailure as exc:
        exc.raw = text
        raise


class RemotePredictor(Predictor):
    # temperature is pinned to 0, so repeated prompts are treated as repeatable
    deterministic = True

    def __init__(
        self,
        endpoint: EndpointConfig,
        mode: Mode | str = Mode.PLAIN,
        log: QueryLog | None = None,
        max_concurrency: int = 4,
    ):
        super().__init__(mode, log)
        self.endpoint = endpoint
        self.max_concurrency = max_concurrency
        self.deterministic = endpoint.temperature == 0

    def _predict(self, scenario: DrivingScenario) -> tuple[PredictionResult, str]:
        return remote_predict(scenario, self.endpoint, self.mode)


# -- wrappers ----------------------------------------------------------------


class CachedPredictor(Predictor):
    """Memoize a deterministic predictor by canonical scenario hash.

    Parse failures are cached too; transport errors are not. Cache hits do not
    reach the inner predictor and so cost no query budget.
    """

    def __init__(self, inner: Predictor, log: QueryLog | None = None):
        if not inner.deterministic:
            raise ValueError("refusing to cache a non-deterministic predictor")
        super().__init__(inner.mode, log)
        self.inner = inner
        self.max_concurrency = inner.max_concurrency
        self._cache: dict[str, PredictionResult | ParseFailure] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def predict(self, scenario: DrivingScenario) -> PredictionResult:
        key = scenario_hash(scenario)
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None:
                self.hits += 1
        if hit is None:
            try:
                value: PredictionResult | ParseFailure = self.inner.predict(scenario)
            except ParseFailure as exc:
                value = exc
            with self._lock:
                self._cache.setdefault(key, value)
                self.misses += 1
        result = hit if hit is not None else value
        if self.log is not None:
            outcome = "ok" if isinstance(result, PredictionResult) else result.category
            self.log.append(QueryRecord(key, "", "", outcome, 0.0, cache_hit=hit is not None))
        if isinstance(result, ParseFailure):
            raise result
        return result

    __call__ = predict


class AuditingPredictor(Predictor):
    """Pass-through that hands every queried scenario to ``check`` first."""

    def __init__(self, inner: Predictor, check: Callable[[DrivingScenario], None]):
        super().__init__(inner.mode, None)
        self.inner = inner
        self.check = check
        self.deterministic = inner.deterministic
        self.max_concurrency = inner.max_concurrency
        self.calls = 0
        self._lock = threading.Lock()

    def predict(self, scenario: DrivingScenario) -> PredictionResult:
        self.check(scenario)
        with self._lock:
            self.calls += 1
        return self.inner.predict(scenario)

    __call__ = predict
