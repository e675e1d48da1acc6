"""Feature-level vulnerability statistics across an attack campaign."""
from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .attack import AttackResult

CSV_COLUMNS = ("feature", "selection_count", "mean_impact", "flip_rate")


@dataclass(frozen=True)
class FeatureVulnerability:
    feature: str
    selection_count: int
    mean_impact: float
    flip_rate: float


def _flipped(result: AttackResult) -> bool:
    clean, best = result.clean.prediction, result.best.prediction
    if clean is None or best is None:
        return (clean is None) != (best is None)
    return clean.intention != best.intention


def aggregate(results: Sequence[AttackResult]) -> list[FeatureVulnerability]:
    """Group runs by the feature their best candidate targeted.

    Runs that fell back to the zero perturbation select nothing and are left out.
    """
    if not results:
        raise ValueError("no attack results to aggregate")
    impacts: dict[str, list[float]] = defaultdict(list)
    flips: dict[str, int] = defaultdict(int)
    for r in results:
        if not r.perturbed:
            continue
        impacts[r.best.feature].append(r.impact)
        flips[r.best.feature] += _flipped(r)
    vulns = [
        FeatureVulnerability(f, len(v), sum(v) / len(v), flips[f] / len(v))
        for f, v in impacts.items()
    ]
    vulns.sort(key=lambda x: (-x.selection_count, x.feature))
    return vulns


def to_csv(vulns: Iterable[FeatureVulnerability]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for v in vulns:
        w.writerow([v.feature, v.selection_count, repr(v.mean_impact), repr(v.flip_rate)])
    return buf.getvalue()


def to_json(vulns: Iterable[FeatureVulnerability]) -> str:
    return json.dumps([asdict(v) for v in vulns], indent=2) + "\n"


def emit(vulns: Sequence[FeatureVulnerability], path: str | Path, fmt: str | None = None) -> Path:
    """Write ``vulns`` as csv or json (inferred from the suffix when ``fmt`` is None)."""
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt not in ("csv", "json"):
        raise ValueError(f"unsupported format {fmt!r}; use csv or json")
    if not vulns:
        raise ValueError("refusing to write an empty vulnerability report")
    text = to_csv(vulns) if fmt == "csv" else to_json(vulns)
    path.write_text(text, encoding="utf-8")
    return path


def load_json(path: str | Path) -> list[FeatureVulnerability]:
    return [FeatureVulnerability(**d) for d in json.loads(Path(path).read_text(encoding="utf-8"))]
