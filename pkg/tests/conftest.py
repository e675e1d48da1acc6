from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from onefeat.scenario import (
    Direction,
    DrivingScenario,
    EgoState,
    GroundTruth,
    Intention,
    LanePosition,
    MapInfo,
    NeighborState,
    VehicleKind,
)

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = ROOT / "prompts" / "golden"

# criterion lines recorded by the acceptance suite, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def example_scenario(**ego_changes) -> DrivingScenario:
    """The worked example from the prompt documentation."""
    ego = dict(
        vx=78.52,
        vy=2.05,
        ax=2.20,
        ay=-2.20,
        kind=VehicleKind.CAR,
        width=2.02,
        length=4.65,
        history=(
            (-41.30, -0.79),
            (-33.92, -0.71),
            (-25.71, -0.58),
            (-17.37, -0.41),
            (-8.79, -0.22),
            (0.0, 0.0),
        ),
    )
    ego.update(ego_changes)
    return DrivingScenario(
        id="example",
        map=MapInfo(4, LanePosition.RIGHTMOST),
        ego=EgoState(**ego),
        neighbors=(
            NeighborState(Direction.LEFT_FRONT, VehicleKind.CAR, 85.43, 103.0),
            NeighborState(Direction.LEFT_BEHIND, VehicleKind.CAR, 91.84, 60.0),
        ),
    )


EXAMPLE_TRUTH = GroundTruth(
    Intention.LC, ((22.07, 0.59), (44.45, 1.08), (66.97, 1.42), (89.56, 1.61))
)


@pytest.fixture
def scenario() -> DrivingScenario:
    return example_scenario()


@pytest.fixture(scope="session")
def planted_corpus():
    from onefeat.ingest import PLANTED_CORPUS, PLANTED_SEED, generate_synthetic

    return generate_synthetic(PLANTED_CORPUS, PLANTED_SEED)


class _Handler(BaseHTTPRequestHandler):
    script: list = []  # (status, body, delay) consumed in order; last repeats
    seen: list = []

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        type(self).seen.append((self.path, dict(self.headers), body))
        status, payload, delay = self.script[0] if len(self.script) == 1 else self.script.pop(0)
        time.sleep(delay)
        data = json.dumps(payload).encode() if not isinstance(payload, bytes) else payload
        try:
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)
        except (BrokenPipeError, ConnectionResetError):
            pass

    def log_message(self, *args):
        pass


def chat(text):
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


@pytest.fixture
def server():
    """Local chat-completions stand-in answering from a scripted queue."""
    _Handler.script = [(200, chat((GOLDEN / "response_example.txt").read_text()), 0.0)]
    _Handler.seen = []
    httpd = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    t = threading.Thread(target=httpd.serve_forever, daemon=True)
    t.start()
    yield httpd, _Handler
    httpd.shutdown()
    httpd.server_close()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
