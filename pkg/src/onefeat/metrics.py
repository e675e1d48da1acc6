"""Evaluation tables: horizon-wise RMSE and per-class intention P/R/F1."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .scenario import GroundTruth, Intention, PredictionResult

AXES = ("Lateral", "Longitudinal", "Avg.")
HORIZONS = ("1s", "2s", "3s", "4s")
CLASSES = ("LK", "LC", "RC")  # display names as the result tables print them


@dataclass(frozen=True)
class PositionErrorTable:
    lateral: tuple[float, ...]
    longitudinal: tuple[float, ...]
    count: int = 0

    @property
    def avg(self) -> tuple[float, ...]:
        return tuple((a + b) / 2 for a, b in zip(self.lateral, self.longitudinal))

    def rows(self) -> dict[str, tuple[float, ...]]:
        return {"Lateral": self.lateral, "Longitudinal": self.longitudinal, "Avg.": self.avg}

    def to_dict(self) -> dict[str, Any]:
        return {"count": self.count, **{k: list(v) for k, v in self.rows().items()}}


def rmse_table(pairs: Sequence[tuple[PredictionResult, GroundTruth]]) -> PositionErrorTable:
    """RMSE per horizon second; lateral is the y axis, longitudinal the x axis."""
    if not pairs:
        raise ValueError("rmse_table needs at least one (prediction, truth) pair")
    pred = np.array([p.trajectory for p, _ in pairs], dtype=float)
    true = np.array([t.trajectory for _, t in pairs], dtype=float)
    rmse = np.sqrt(np.mean((pred - true) ** 2, axis=0))  # (4, 2): x, y
    return PositionErrorTable(
        lateral=tuple(float(v) for v in rmse[:, 1]),
        longitudinal=tuple(float(v) for v in rmse[:, 0]),
        count=len(pairs),
    )


@dataclass
class ConfusionMatrix:
    """Counts indexed (truth, prediction); unparseable answers are kept aside."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros((3, 3), dtype=np.int64))
    parse_failures: int = 0

    def add(self, truth: Intention, prediction: Intention | None) -> None:
        if prediction is None:
            self.parse_failures += 1
        else:
            self.counts[int(truth), int(prediction)] += 1

    @classmethod
    def from_pairs(
        cls, pairs: Iterable[tuple[Intention, Intention | None]]
    ) -> "ConfusionMatrix":
        cm = cls()
        for t, p in pairs:
            cm.add(t, p)
        return cm

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts, self.parse_failures + other.parse_failures)


@dataclass(frozen=True)
class IntentionReport:
    """Percentages at full precision; round only for display."""

    precision: tuple[float, float, float]
    recall: tuple[float, float, float]
    f1: tuple[float, float, float]
    undefined: tuple[str, ...] = ()
    parse_failures: int = 0

    @property
    def macro(self) -> dict[str, float]:
        return {
            "precision": sum(self.precision) / 3,
            "recall": sum(self.recall) / 3,
            "f1": sum(self.f1) / 3,
        }

    def rows(self) -> dict[str, tuple[float, ...]]:
        m = self.macro
        return {
            "Precision": self.precision + (m["precision"],),
            "Recall": self.recall + (m["recall"],),
            "F1": self.f1 + (m["f1"],),
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "classes": list(CLASSES),
            "precision": list(self.precision),
            "recall": list(self.recall),
            "f1": list(self.f1),
            "macro": self.macro,
            "undefined": list(self.undefined),
            "parse_failures": self.parse_failures,
        }


def f1_score(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def intention_report(matrix: ConfusionMatrix) -> IntentionReport:
    """Per-class and macro precision/recall/F1 in percent.

    A class with no true samples (or no predictions) gets 0 and is listed in
    ``undefined`` rather than raising.
    """
    c = matrix.counts
    if c.sum() == 0:
        raise ValueError("confusion matrix is empty")
    tp = np.diag(c).astype(float)
    pred_tot = c.sum(axis=0)
    true_tot = c.sum(axis=1)
    undefined = []
    prec, rec = [], []
    for k in range(3):
        if pred_tot[k] == 0:
            undefined.append(f"{CLASSES[k]}.precision")
            prec.append(0.0)
        else:
            prec.append(100.0 * tp[k] / pred_tot[k])
        if true_tot[k] == 0:
            undefined.append(f"{CLASSES[k]}.recall")
            rec.append(0.0)
        else:
            rec.append(100.0 * tp[k] / true_tot[k])
    f1 = tuple(f1_score(p, r) for p, r in zip(prec, rec))
    return IntentionReport(tuple(prec), tuple(rec), f1, tuple(undefined), matrix.parse_failures)


def percent_change(clean: float, attacked: float) -> int | None:
    """Relative change in whole percent, half away from zero; None when clean is 0."""
    if clean == 0:
        return None
    return round_half_up(100.0 * (attacked - clean) / clean)


def round_half_up(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def format_change(change: int | None) -> str:
    if change is None:
        return "n/a"
    return f"{change:+d}%" if change else "0%"


def degradation(clean, attacked) -> dict[str, list[int | None]]:
    """Row-wise percent change between two tables of the same kind."""
    if type(clean) is not type(attacked):
        raise TypeError("clean and attacked must be the same kind of table")
    return {
        name: [percent_change(c, a) for c, a in zip(row, attacked.rows()[name])]
        for name, row in clean.rows().items()
    }


# -- plain-text layout ------------------------------------------------------------


def format_tables(
    sections: Sequence[tuple[str, PositionErrorTable | None, IntentionReport | None]],
    show_change: bool = True,
) -> str:
    """Aligned text mirroring the published layout; the first section is the reference."""
    out = []
    ref_pos = sections[0][1] if sections else None
    ref_int = sections[0][2] if sections else None
    width = max([len(s[0]) for s in sections] + [10])

    if any(s[1] is not None for s in sections):
        out.append("RMSE of Predicted Positions (m)")
        out.append(f"{'':{width}}  {'':12}" + "".join(f"{h:>14}" for h in HORIZONS))
        for i, (name, pos, _) in enumerate(sections):
            if pos is None:
                continue
            change = degradation(ref_pos, pos) if (show_change and i and ref_pos) else None
            for j, (axis, row) in enumerate(pos.rows().items()):
                cells = []
                for t, v in enumerate(row):
                    cell = f"{v:.2f}"
                    if change and axis == "Avg." and t == len(row) - 1:
                        cell += f" ({format_change(change[axis][t])})"
                    cells.append(f"{cell:>14}")
                out.append(f"{name if j == 0 else '':{width}}  {axis:12}" + "".join(cells))
        out.append("")

    if any(s[2] is not None for s in sections):
        out.append("Intention accuracy (%)")
        out.append(f"{'':{width}}  {'':12}" + "".join(f"{c:>12}" for c in CLASSES + ("Macro avg.",)))
        for i, (name, _, rep) in enumerate(sections):
            if rep is None:
                continue
            change = degradation(ref_int, rep) if (show_change and i and ref_int) else None
            for j, (metric, row) in enumerate(rep.rows().items()):
                cells = []
                for t, v in enumerate(row):
                    cell = str(round_half_up(v))
                    if change and metric == "F1" and t == len(row) - 1:
                        cell += f" ({format_change(change[metric][t])})"
                    cells.append(f"{cell:>12}")
                out.append(f"{name if j == 0 else '':{width}}  {metric:12}" + "".join(cells))
            if rep.parse_failures:
                out.append(f"{'':{width}}  unparseable answers: {rep.parse_failures}")
    return "\n".join(out).rstrip() + "\n"
