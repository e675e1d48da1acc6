"""Independent loop-based references for the metric tables."""
from __future__ import annotations

import math
import random

from onefeat.scenario import GroundTruth, Intention, PredictionResult


def rmse_reference(pairs):
    n = len(pairs)
    lat, lon = [], []
    for t in range(4):
        sx = sy = 0.0
        for pred, truth in pairs:
            sx += (pred.trajectory[t][0] - truth.trajectory[t][0]) ** 2
            sy += (pred.trajectory[t][1] - truth.trajectory[t][1]) ** 2
        lon.append(math.sqrt(sx / n))
        lat.append(math.sqrt(sy / n))
    return lat, lon


def prf_reference(truths, preds):
    """Per-class (precision, recall, f1) in percent; 0 where undefined."""
    out = []
    for k in (0, 1, 2):
        tp = sum(1 for t, p in zip(truths, preds) if t == k and p == k)
        fp = sum(1 for t, p in zip(truths, preds) if t != k and p == k)
        fn = sum(1 for t, p in zip(truths, preds) if t == k and p != k)
        prec = 100.0 * tp / (tp + fp) if tp + fp else 0.0
        rec = 100.0 * tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        out.append((prec, rec, f1))
    return out


def random_sample_set(rnd: random.Random):
    n = rnd.randint(1, 12)
    pairs = []
    for _ in range(n):
        t = Intention(rnd.randrange(3))
        p = Intention(rnd.randrange(3))
        tt = tuple((rnd.uniform(0, 120), rnd.uniform(-4, 4)) for _ in range(4))
        pt = tuple((x + rnd.gauss(0, 2), y + rnd.gauss(0, 0.5)) for x, y in tt)
        pairs.append((PredictionResult(p, pt), GroundTruth(t, tt)))
    return pairs
