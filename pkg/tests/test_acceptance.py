"""The ten acceptance criteria, each reporting one PASS/FAIL line."""
import random
import statistics
import time

import numpy as np
import pytest

from onefeat.attack import (
    DEParams,
    crossover,
    grid_oracle,
    mutate,
    random_attack,
    refined_optimum,
    repair,
    rng_for,
    run_attack,
)
from onefeat.cli import main
from onefeat.features import PHYSICAL_BOUNDS, enumerate_features, feature_value
from onefeat.ingest import flippable_features
from onefeat.metrics import (
    ConfusionMatrix,
    IntentionReport,
    PositionErrorTable,
    format_change,
    intention_report,
    percent_change,
    rmse_table,
    round_half_up,
)
from onefeat.predictor import AuditingPredictor, SurrogatePredictor
from onefeat.prompts import (
    InvalidIntentionCode,
    MalformedNumber,
    MissingIntention,
    WaypointCountMismatch,
    normalize_ws,
    parse_response,
    render,
)
from onefeat.scenario import write_corpus
from onefeat.vulnerability import aggregate

from conftest import ACCEPTANCE_LINES, GOLDEN, example_scenario
from oracles import prf_reference, random_sample_set, rmse_reference

pytestmark = pytest.mark.acceptance

SEEDS = range(30)
PLANTED_FEATURE = "LeftFront.Distance"


def verdict(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def macro_f1(pairs) -> float:
    cm = ConfusionMatrix.from_pairs((t.intention, None if p is None else p.intention) for t, p in pairs)
    return intention_report(cm).macro["f1"]


class BoundAudit:
    """Checks every queried scenario against the campaign's clean originals."""

    def __init__(self, corpus, budget):
        self.originals = {s.id: s for s, _ in corpus}
        self.budget = budget
        self.checked = 0
        self.violations: list[str] = []

    def __call__(self, queried):
        self.checked += 1
        orig = self.originals[queried.id]
        changed = [
            f for f in enumerate_features(orig) if feature_value(queried, f) != feature_value(orig, f)
        ]
        if len(changed) > 1 or queried.ego != orig.ego or queried.map != orig.map:
            self.violations.append(f"{queried.id}: more than one feature changed")
        for f in changed:
            v = feature_value(queried, f)
            s = feature_value(orig, f)
            lo, hi = s - self.budget * abs(s), s + self.budget * abs(s)
            if not (lo <= v <= hi and PHYSICAL_BOUNDS[f.attribute].contains(v)):
                self.violations.append(f"{queried.id}: {f.label}={v!r} outside budget")


@pytest.fixture(scope="module")
def campaigns(planted_corpus):
    """DE campaigns at Δ = 0.1 over seeds 0-29, audited query by query."""
    audit = BoundAudit(planted_corpus, 0.1)
    predictor = AuditingPredictor(SurrogatePredictor(), audit)
    runs = {}
    for seed in SEEDS:
        runs[seed] = [
            run_attack(s, t, predictor, DEParams(budget=0.1), rng=rng_for(seed, s.id), seed=seed)
            for s, t in planted_corpus
        ]
    return runs, audit, predictor.calls


# 1 ---------------------------------------------------------------------------------


def test_criterion_1_prompt_golden():
    t0 = time.perf_counter()
    system, user = render(example_scenario())
    elapsed = time.perf_counter() - t0
    ok_sys = normalize_ws(system) == normalize_ws((GOLDEN / "system_plain.txt").read_text())
    ok_user = normalize_ws(user) == normalize_ws((GOLDEN / "user_example.txt").read_text())
    verdict(
        1,
        "prompt golden",
        ok_sys and ok_user and elapsed < 1.0,
        f"system={'match' if ok_sys else 'DIFF'} user={'match' if ok_user else 'DIFF'} in {elapsed * 1e3:.2f} ms",
    )


# 2 ---------------------------------------------------------------------------------


def test_criterion_2_response_parsing():
    text = (GOLDEN / "response_example.txt").read_text()
    pred = parse_response(text)
    expected = ((22.07, 0.59), (44.45, 1.08), (66.97, 1.42), (89.56, 1.61))
    ok = pred.intention == 1 and pred.trajectory == expected
    cases = {
        "3 waypoints": (text.replace(", (89.56,1.61)", ""), WaypointCountMismatch),
        "missing intention": (text.replace("Intention: 1: Left lane change;", ""), MissingIntention),
        "non-numeric": (text.replace("66.97", "sixty"), MalformedNumber),
        "bad code": (text.replace("Intention: 1", "Intention: 7"), InvalidIntentionCode),
    }
    got = {}
    for name, (bad, err) in cases.items():
        try:
            parse_response(bad)
            got[name] = "parsed"
        except err as exc:
            got[name] = exc.category
        except Exception as exc:  # wrong category
            got[name] = f"wrong:{type(exc).__name__}"
    ok = ok and all(v == cases[k][1].category for k, v in got.items())
    verdict(2, "response parsing", ok, f"intention={int(pred.intention)} waypoints exact; " + ", ".join(
        f"{k}->{v}" for k, v in got.items()))


# 3 ---------------------------------------------------------------------------------


class _Scripted:
    def __init__(self, random=(), integers=(), uniform=()):
        self.r, self.i, self.u = list(random), list(integers), list(uniform)

    def random(self, n):
        return np.array([self.r.pop(0) for _ in range(n)])

    def integers(self, *a):
        return self.i.pop(0)

    def uniform(self, lo, hi):
        return lo + (hi - lo) * self.u.pop(0)


def test_criterion_3_de_algebra():
    pop = np.array([[0.5, 1.0], [1.5, 2.0], [2.5, -1.0], [3.5, 0.5]])
    x, v = np.array([0.5, 1.0]), np.array([2.7, -3.0])
    s = example_scenario()
    feats = enumerate_features(s)
    same = pop.copy()
    same[3] = same[2]
    checks = {
        "mutation": mutate(pop, 0, 0.5, None, donors=(1, 2, 3)).tolist() == [1.0, 1.25],
        "alpha=0": mutate(pop, 0, 0.0, None, donors=(1, 2, 3)).tolist() == [1.5, 2.0],
        "x_r2=x_r3": mutate(same, 0, 0.7, None, donors=(1, 2, 3)).tolist() == [1.5, 2.0],
        "crossover": crossover(x, v, 0.5, _Scripted([0.6, 0.3], [0])).tolist() == [2.7, -3.0]
        and crossover(x, v, 0.5, _Scripted([0.6, 0.7], [1])).tolist() == [0.5, -3.0],
        "CR=0": crossover(x, v, 0.0, _Scripted([0.1, 0.2], [1])).tolist() == [0.5, -3.0],
        "CR=1": crossover(x, v, 1.0, _Scripted([0.99, 0.999], [0])).tolist() == [2.7, -3.0],
        "repair wrap": repair(np.array([4.75, 1.0]), s, 0.1, _Scripted(), feats).tolist() == [0.75, 1.0]
        and repair(np.array([-0.25, 1.0]), s, 0.1, _Scripted(), feats).tolist() == [3.75, 1.0],
        "repair resample": repair(np.array([1.2, 15.0]), s, 0.1, _Scripted(uniform=[0.5]), feats)[1]
        == pytest.approx(0.0, abs=1e-12),
    }
    failed = [k for k, ok in checks.items() if not ok]
    verdict(3, "DE algebra", not failed, f"{len(checks) - len(failed)}/{len(checks)} hand-computed cases exact"
            + (f"; failed {failed}" if failed else ""))


# 4 ---------------------------------------------------------------------------------


def test_criterion_4_bound_audit(campaigns, planted_corpus):
    runs, audit, calls = campaigns
    ok = not audit.violations and audit.checked == calls == 30 * 100 * 56
    verdict(4, "bound audit", ok, f"{audit.checked} queried scenarios over 30 seeds x {len(planted_corpus)} "
            f"scenarios, {len(audit.violations)} violations")


# 5 ---------------------------------------------------------------------------------


def test_criterion_5_grid_oracle_sanity(planted_corpus):
    t0 = time.perf_counter()
    sp = SurrogatePredictor()
    planted = [(s, t) for s, t in planted_corpus if flippable_features(s, sp, 0.1)]
    worst, exceed = 30, []
    for s, t in planted:
        grid = grid_oracle(s, t, sp, 0.1, steps=41)
        ceiling = refined_optimum(s, t, sp, grid, 0.1, factor=10)
        wins = 0
        for seed in SEEDS:
            de = run_attack(s, t, sp, DEParams(budget=0.1), rng=rng_for(seed, s.id), seed=seed)
            rnd = random_attack(s, t, sp, 50, 0.1, rng=rng_for(seed, s.id), seed=seed)
            wins += de.best.fitness >= rnd.best.fitness
            if de.best.fitness > ceiling + 1e-9:
                exceed.append((s.id, seed))
        worst = min(worst, wins)
    elapsed = time.perf_counter() - t0
    ok = planted and worst >= 24 and not exceed and elapsed < 300
    verdict(5, "grid-oracle sanity", bool(ok), f"{len(planted)} planted scenarios, worst DE>=random "
            f"{worst}/30 (need 24), {len(exceed)} above refined optimum, {elapsed:.1f} s")


# 6 ---------------------------------------------------------------------------------


def test_criterion_6_attack_efficacy(campaigns, planted_corpus):
    runs, _, _ = campaigns
    truths = [t for _, t in planted_corpus]
    clean = macro_f1([(t, r.clean.prediction) for t, r in zip(truths, runs[0])])
    sp = SurrogatePredictor()
    de_drops, rnd_drops = [], []
    for seed in SEEDS:
        de_drops.append(clean - macro_f1([(t, r.best.prediction) for t, r in zip(truths, runs[seed])]))
        single = [
            random_attack(s, t, sp, DEParams().max_queries, 0.1, rng=rng_for(seed, s.id), seed=seed).last
            for s, t in planted_corpus
        ]
        rnd_drops.append(clean - macro_f1([(t, o.prediction) for t, o in zip(truths, single)]))
    de_med, rnd_med = statistics.median(de_drops), statistics.median(rnd_drops)
    ok = clean == 100.0 and de_med >= 10 and rnd_med <= 2
    verdict(6, "attack efficacy", ok, f"clean F1 {clean:.1f}; median macro-F1 drop DE {de_med:.2f} (need >=10), "
            f"single-draw random {rnd_med:.2f} (need <=2)")


# 7 ---------------------------------------------------------------------------------


def test_criterion_7_budget_monotonicity(planted_corpus):
    sp = SurrogatePredictor()
    bad = []
    for s, t in planted_corpus:
        optima = [grid_oracle(s, t, sp, d, steps=41).best_fitness for d in (0.1, 0.2, 0.3)]
        if not optima[0] <= optima[1] <= optima[2]:
            bad.append((s.id, optima))
    verdict(7, "budget monotonicity", not bad,
            f"{len(planted_corpus) - len(bad)}/{len(planted_corpus)} scenarios non-decreasing over 0.1/0.2/0.3")


# 8 ---------------------------------------------------------------------------------


def test_criterion_8_metrics_oracle():
    rnd = random.Random(2024)
    worst = 0.0
    for _ in range(1000):
        pairs = random_sample_set(rnd)
        table = rmse_table(pairs)
        lat, lon = rmse_reference(pairs)
        worst = max(worst, *(abs(a - b) for a, b in zip(table.lateral + table.longitudinal, lat + lon)))
        truths = [int(t.intention) for _, t in pairs]
        preds = [int(p.intention) for p, _ in pairs]
        rep = intention_report(ConfusionMatrix.from_pairs(zip(truths, preds)))
        for k, ref in enumerate(prf_reference(truths, preds)):
            got = (rep.precision[k], rep.recall[k], rep.f1[k])
            worst = max(worst, *(abs(a - b) for a, b in zip(got, ref)))
    avg = PositionErrorTable((0.62,), (0.78,)).avg[0]
    macro = IntentionReport((0, 0, 0), (0, 0, 0), (89, 93, 94)).macro["f1"]
    up, down = format_change(percent_change(0.70, 0.90)), format_change(percent_change(92, 81))
    ok = worst <= 1e-9 and f"{avg:.2f}" == "0.70" and round_half_up(macro) == 92 and up == "+29%" and down == "-12%"
    verdict(8, "metrics oracle", ok, f"1000 random sets, max |diff| {worst:.1e}; avg {avg:.2f}, macro F1 "
            f"{round_half_up(macro)}, changes {up} / {down}")


# 9 ---------------------------------------------------------------------------------


def test_criterion_9_determinism(tmp_path, planted_corpus):
    corpus = tmp_path / "planted.jsonl"
    write_corpus(corpus, planted_corpus)
    outs = []
    for name in ("run1", "run2"):
        out = tmp_path / name
        assert main(["attack", "--corpus", str(corpus), "--seed", "7", "--out", str(out)]) == 0
        outs.append(out / "delta_0.1")
    files = ["attack_results.jsonl", "report.json", "vulnerability.csv"]
    same = [f for f in files if (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()]
    verdict(9, "determinism", len(same) == 3, f"{len(same)}/3 output files byte-identical across two runs")


# 10 --------------------------------------------------------------------------------


def test_criterion_10_vulnerability_report(campaigns):
    runs, _, _ = campaigns
    tops = [aggregate(runs[seed])[0].feature for seed in SEEDS]
    hits = sum(f == PLANTED_FEATURE for f in tops)
    verdict(10, "vulnerability report", hits >= 27,
            f"{PLANTED_FEATURE} ranked first in {hits}/30 seed runs (need 27)")
