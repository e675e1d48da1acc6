"""Command-line entry point: ``onefeat {eval,attack,baseline,gen,extract,report}``.

Campaign settings come from an optional JSON file whose keys match the long
flag names (``--gens`` ↔ ``"gens"``); flags given on the command line win.
Exit codes: 0 success, 1 configuration error, 2 data error, 3 endpoint failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

from . import __version__
from .attack import (
    AttackResult,
    DEParams,
    FitnessWeights,
    NoAttackSurface,
    Outcome,
    random_attack,
    rng_for,
    run_attack,
    score,
)
from .ingest import (
    PLANTED_CORPUS,
    CorpusSpec,
    ExtractionConfig,
    IngestError,
    extract_scenarios,
    generate_synthetic,
    load_tracks,
)
from .metrics import (
    ConfusionMatrix,
    IntentionReport,
    PositionErrorTable,
    degradation,
    format_tables,
    intention_report,
    rmse_table,
)
from .predictor import (
    CachedPredictor,
    EndpointConfig,
    Predictor,
    RemotePredictor,
    SurrogatePredictor,
    TransportError,
)
from .prompts import Mode, ParseFailure
from .scenario import DrivingScenario, GroundTruth, PredictionResult, read_corpus, validate, write_corpus
from .vulnerability import aggregate, emit

log = logging.getLogger("onefeat")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ENDPOINT = 0, 1, 2, 3


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


class EndpointFailure(Exception):
    pass


# -- configuration -------------------------------------------------------------


@dataclass(frozen=True)
class CampaignConfig:
    seed: int
    corpus: str | None = None
    out: str | None = None
    predictor: str = "surrogate"
    endpoint: str | None = None
    model: str = "default"
    timeout: float = 60.0
    retries: int = 3
    cot: bool = False
    delta: tuple[float, ...] = (0.1,)
    pop: int = 5
    alpha: float = 0.5
    cr: float = 0.9
    gens: int = 10
    w_traj: float = 1.0
    w_int: float = 5.0
    w_parse: float | None = None
    workers: int = 1
    query_budget: int | None = None  # baseline draws; defaults to the DE query count
    max_failure_rate: float = 0.0  # tolerated share of scenarios lost to transport errors

    def __post_init__(self) -> None:
        if self.predictor not in ("surrogate", "remote"):
            raise ConfigError(f"unknown predictor {self.predictor!r}")
        if not self.delta:
            raise ConfigError("at least one --delta is required")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 0 <= self.max_failure_rate <= 1:
            raise ConfigError("max_failure_rate must lie in [0, 1]")
        try:
            for d in self.delta:
                self.de_params(d)
            self.weights()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def mode(self) -> Mode:
        return Mode.COT if self.cot else Mode.PLAIN

    def de_params(self, delta: float) -> DEParams:
        return DEParams(self.pop, self.alpha, self.cr, self.gens, delta)

    def weights(self) -> FitnessWeights:
        return FitnessWeights(self.w_traj, self.w_int, self.w_parse)

    def identity(self) -> dict[str, Any]:
        """Settings that can change results; output paths and pool width cannot."""
        d = dataclasses.asdict(self)
        for k in ("out", "workers", "corpus"):
            d.pop(k)
        d["delta"] = list(self.delta)
        return d


_CONFIG_KEYS = {f.name for f in dataclasses.fields(CampaignConfig)}


def load_config(args: argparse.Namespace) -> CampaignConfig:
    values: dict[str, Any] = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            values = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        unknown = sorted(set(values) - _CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"{path}: unknown keys {unknown}")
    for key in _CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if values.get("seed") is None:
        raise ConfigError("a seed is mandatory (--seed or \"seed\" in the config file)")
    if "delta" in values:
        d = values["delta"]
        values["delta"] = tuple(float(x) for x in (d if isinstance(d, (list, tuple)) else [d]))
    try:
        return CampaignConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def build_predictor(cfg: CampaignConfig) -> Predictor:
    if cfg.predictor == "surrogate":
        return CachedPredictor(SurrogatePredictor(mode=cfg.mode))
    try:
        endpoint = EndpointConfig.from_env(
            cfg.endpoint, model=cfg.model, timeout=cfg.timeout, max_retries=cfg.retries
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return CachedPredictor(RemotePredictor(endpoint, mode=cfg.mode, max_concurrency=cfg.workers))


def load_samples(path: str | None) -> list[tuple[DrivingScenario, GroundTruth]]:
    if not path:
        raise ConfigError("--corpus is required")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"corpus not found: {p}")
    try:
        samples = read_corpus(p)
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{p}: unreadable corpus ({exc})") from None
    if not samples:
        raise DataError(f"{p}: corpus is empty")
    missing = [s.id for s, t in samples if t is None]
    if missing:
        raise ConfigError(f"{p}: {len(missing)} scenarios lack ground truth (first: {missing[0]})")
    for s, _ in samples:
        problems = validate(s)
        if problems:
            raise DataError(f"{p}: scenario {s.id}: {'; '.join(problems)}")
    return samples  # type: ignore[return-value]


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_manifest(out: Path, command: str, cfg: CampaignConfig) -> None:
    ident = cfg.identity()
    manifest = {
        "tool": "onefeat",
        "version": __version__,
        "command": command,
        "seed": cfg.seed,
        "config": ident,
        "config_hash": hashlib.sha256(json.dumps(ident, sort_keys=True).encode()).hexdigest(),
        "corpus_hash": sha256_file(cfg.corpus),
    }
    (out / "manifest.json").write_text(_json(manifest), encoding="utf-8")


# -- campaign helpers -----------------------------------------------------------


def _clean_outcome(
    scenario: DrivingScenario, truth: GroundTruth, predictor: Predictor, weights: FitnessWeights
) -> Outcome:
    try:
        pred: PredictionResult | None = predictor.predict(scenario)
        failure = None
    except ParseFailure as exc:
        pred, failure = None, exc.category
    return Outcome(None, 0.0, score(pred, truth, weights, 0.0), pred, failure)


def _untouched(scenario, truth, predictor, cfg: CampaignConfig, delta: float, method: str) -> AttackResult:
    """A scenario without neighbors: nothing to perturb, the clean answer stands."""
    clean = _clean_outcome(scenario, truth, predictor, cfg.weights())
    return AttackResult(scenario.id, method, cfg.seed, delta, clean, clean, (), 0, clean if method == "random" else None)


def _pool_map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def tables(
    pairs: Sequence[tuple[GroundTruth, PredictionResult | None]],
) -> tuple[PositionErrorTable | None, IntentionReport | None]:
    """Error tables over a sample; unparseable answers count only against intention."""
    parsed = [(p, t) for t, p in pairs if p is not None]
    pos = rmse_table(parsed) if parsed else None
    cm = ConfusionMatrix.from_pairs((t.intention, None if p is None else p.intention) for t, p in pairs)
    rep = intention_report(cm) if cm.total else None
    return pos, rep


def _section(pos: PositionErrorTable | None, rep: IntentionReport | None) -> dict[str, Any]:
    return {
        "position": None if pos is None else pos.to_dict(),
        "intention": None if rep is None else rep.to_dict(),
    }


def _changes(clean, attacked) -> dict[str, Any]:
    out: dict[str, Any] = {}
    if clean[0] is not None and attacked[0] is not None:
        out["position"] = degradation(clean[0], attacked[0])
    if clean[1] is not None and attacked[1] is not None:
        out["intention"] = degradation(clean[1], attacked[1])
    return out


def _flipped(a: PredictionResult | None, b: PredictionResult | None) -> bool:
    if a is None or b is None:
        return (a is None) != (b is None)
    return a.intention != b.intention


class _Campaign:
    """Runs one attack method over the corpus for one budget."""

    def __init__(self, cfg: CampaignConfig, samples, predictor: Predictor, method: str):
        self.cfg = cfg
        self.samples = samples
        self.predictor = predictor
        self.method = method

    def _one(self, delta: float):
        cfg = self.cfg
        params = cfg.de_params(delta)
        budget_q = cfg.query_budget or params.max_queries

        def work(sample):
            scenario, truth = sample
            rng = rng_for(cfg.seed, scenario.id)
            try:
                if self.method == "de":
                    return run_attack(scenario, truth, self.predictor, params, cfg.weights(), rng, cfg.seed)
                return random_attack(
                    scenario, truth, self.predictor, budget_q, delta, rng, cfg.weights(), cfg.seed
                )
            except NoAttackSurface:
                return _untouched(scenario, truth, self.predictor, cfg, delta, self.method)
            except TransportError as exc:
                log.error("scenario %s: %s", scenario.id, exc)
                return exc

        return work

    def run(self, delta: float) -> tuple[list[AttackResult], dict[str, Any]]:
        outcomes = _pool_map(self._one(delta), self.samples, self.cfg.workers)
        results, failed = [], []
        for (s, t), r in zip(self.samples, outcomes):
            (failed if isinstance(r, Exception) else results).append((s, t, r))
        return [r for _, _, r in results], self._report(delta, results, failed)

    def _report(self, delta: float, done, failed) -> dict[str, Any]:
        clean = tables([(t, r.clean.prediction) for _, t, r in done])
        best = tables([(t, r.best.prediction) for _, t, r in done])
        report: dict[str, Any] = {
            "method": self.method,
            "budget": delta,
            "seed": self.cfg.seed,
            "scenarios": len(self.samples),
            "evaluated": len(done),
            "transport_failures": sorted(s.id for s, _, _ in failed),
            "untouched": sum(1 for _, _, r in done if r.total_queries == 0),
            "queries": {
                "attack": sum(r.total_queries for _, _, r in done),
                "clean": sum(r.clean_queries for _, _, r in done),
            },
            "clean": _section(*clean),
        }
        name = "attacked" if self.method == "de" else "best_of_budget"
        report[name] = _section(*best)
        report[name]["flips"] = sum(_flipped(r.clean.prediction, r.best.prediction) for _, _, r in done)
        report[name]["change"] = _changes(clean, best)
        sections = [("No attack", *clean)]
        if self.method == "random":
            single = tables([(t, r.last.prediction) for _, t, r in done])
            report["single_draw"] = _section(*single)
            report["single_draw"]["flips"] = sum(
                _flipped(r.clean.prediction, r.last.prediction) for _, _, r in done
            )
            report["single_draw"]["change"] = _changes(clean, single)
            sections.append(("Random", *single))
            sections.append(("Random (best)", *best))
        else:
            sections.append(("One-feature DE attack", *best))
        report["_sections"] = sections
        return report


def _strip(report: dict[str, Any]) -> dict[str, Any]:
    return {k: v for k, v in report.items() if not k.startswith("_")}


def _delta_dir(out: Path, delta: float) -> Path:
    return out / f"delta_{delta:g}"


def _check_failures(reports: Sequence[dict[str, Any]], cfg: CampaignConfig) -> None:
    for rep in reports:
        lost = len(rep["transport_failures"])
        if rep["scenarios"] and lost / rep["scenarios"] > cfg.max_failure_rate:
            raise EndpointFailure(
                f"{lost}/{rep['scenarios']} scenarios lost to endpoint failures "
                f"(tolerated share {cfg.max_failure_rate:g})"
            )


def run_campaign(cfg: CampaignConfig, method: str, predictor: Predictor | None = None) -> list[dict]:
    """Attack (or baseline) every Δ in the sweep and write one report set per Δ."""
    samples = load_samples(cfg.corpus)
    if not cfg.out:
        raise ConfigError("--out is required")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, "attack" if method == "de" else "baseline", cfg)
    predictor = predictor or build_predictor(cfg)
    campaign = _Campaign(cfg, samples, predictor, method)

    reports = []
    for delta in cfg.delta:
        results, report = campaign.run(delta)
        d = _delta_dir(out, delta)
        d.mkdir(exist_ok=True)
        with open(d / "attack_results.jsonl", "w", encoding="utf-8", newline="\n") as fh:
            for r in results:
                fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
        vulns = aggregate(results) if results else []
        report["vulnerable_features"] = len(vulns)
        if vulns:
            emit(vulns, d / "vulnerability.csv")
        else:
            log.warning("Δ=%g: no run selected a feature; vulnerability.csv not written", delta)
        (d / "report.json").write_text(_json(_strip(report)), encoding="utf-8")
        (d / "report.txt").write_text(format_tables(report["_sections"]), encoding="utf-8")
        reports.append(report)

    if len(cfg.delta) > 1:
        (out / "sweep.txt").write_text(sweep_tables(reports), encoding="utf-8")
    _check_failures(reports, cfg)
    return [_strip(r) for r in reports]


def sweep_tables(reports: Sequence[dict[str, Any]]) -> str:
    """Attacked tables per budget, one block per Δ, under the clean reference."""
    sections = [reports[0]["_sections"][0]]
    for rep in reports:
        sections.append((f"{rep['budget']:g}", *rep["_sections"][-1][1:]))
    return format_tables(sections)


def run_eval(cfg: CampaignConfig, predictor: Predictor | None = None) -> dict[str, Any]:
    samples = load_samples(cfg.corpus)
    predictor = predictor or build_predictor(cfg)
    weights = cfg.weights()

    def work(sample):
        scenario, truth = sample
        try:
            return _clean_outcome(scenario, truth, predictor, weights)
        except TransportError as exc:
            log.error("scenario %s: %s", scenario.id, exc)
            return exc

    outcomes = _pool_map(work, samples, cfg.workers)
    done = [(t, o) for (_, t), o in zip(samples, outcomes) if not isinstance(o, Exception)]
    failed = [s.id for (s, _), o in zip(samples, outcomes) if isinstance(o, Exception)]
    pos, rep = tables([(t, o.prediction) for t, o in done])
    report = {
        "scenarios": len(samples),
        "evaluated": len(done),
        "transport_failures": sorted(failed),
        "parse_failures": sum(o.prediction is None for _, o in done),
        "clean": _section(pos, rep),
    }
    text = format_tables([("No attack", pos, rep)]) if done else "no scenario could be evaluated\n"
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out, "eval", cfg)
        (out / "report.json").write_text(_json(report), encoding="utf-8")
        (out / "report.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    _check_failures([report], cfg)
    return report


# -- thin wrappers ----------------------------------------------------------------


def cmd_gen(args: argparse.Namespace) -> int:
    if args.seed is None:
        raise ConfigError("a seed is mandatory (--seed)")
    base = PLANTED_CORPUS if args.preset == "planted" else CorpusSpec()
    changes = {}
    if args.size is not None:
        changes["size"] = args.size
    if args.planted_fraction is not None:
        changes["planted_fraction"] = args.planted_fraction
    if args.mix is not None:
        changes["mix"] = tuple(args.mix)
    try:
        spec = dataclasses.replace(base, **changes)
        samples = generate_synthetic(spec, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    n = write_corpus(args.out, samples)
    log.info("wrote %d scenarios to %s", n, args.out)
    return EXIT_OK


def cmd_extract(args: argparse.Namespace) -> int:
    if not Path(args.tracks).is_file():
        raise ConfigError(f"tracks file not found: {args.tracks}")
    try:
        cfg = ExtractionConfig(
            lane_convention=args.lane_convention,
            sliding_stride_s=args.sliding_stride,
            recording=args.recording or Path(args.tracks).stem,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        result = extract_scenarios(load_tracks(args.tracks), cfg)
    except IngestError as exc:
        raise DataError(str(exc)) from None
    n = write_corpus(args.out, result.samples)
    for reason, count in sorted(result.skipped.items()):
        log.info("skipped %d anchors: %s", count, reason)
    log.info("wrote %d scenarios to %s", n, args.out)
    return EXIT_OK


def _result_files(inputs: Sequence[str]) -> list[Path]:
    files: list[Path] = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            found = sorted(p.rglob("attack_results.jsonl"))
            if not found:
                raise ConfigError(f"no attack_results.jsonl under {p}")
            files.extend(found)
        elif p.is_file():
            files.append(p)
        else:
            raise ConfigError(f"not found: {p}")
    return files


def cmd_report(args: argparse.Namespace) -> int:
    results: list[AttackResult] = []
    for path in _result_files(args.inputs):
        with open(path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    results.append(AttackResult.from_dict(json.loads(line)))
                except (ValueError, KeyError, TypeError) as exc:
                    raise DataError(f"{path}:{n}: not an attack result ({exc})") from None
    if not results:
        raise DataError("no attack results in the given inputs")
    vulns = aggregate(results)
    if not vulns:
        raise DataError("no run selected a feature; nothing to report")
    try:
        emit(vulns, args.out, args.format)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    log.info("merged %d results into %s", len(results), args.out)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    run_eval(load_config(args))
    return EXIT_OK


def cmd_attack(args: argparse.Namespace) -> int:
    run_campaign(load_config(args), "de")
    return EXIT_OK


def cmd_baseline(args: argparse.Namespace) -> int:
    run_campaign(load_config(args), "random")
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------


def _campaign_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with campaign settings (flags override it)")
    p.add_argument("--corpus", help="scenario .jsonl with ground truths")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="master seed (mandatory)")
    p.add_argument("--delta", type=float, action="append", help="perturbation budget; repeat for a sweep")
    p.add_argument("--pop", type=int, help="DE population size")
    p.add_argument("--alpha", type=float, help="DE mutation scale")
    p.add_argument("--cr", type=float, help="DE crossover rate")
    p.add_argument("--gens", type=int, help="DE generations")
    p.add_argument("--query-budget", dest="query_budget", type=int, help="random-baseline draws")
    p.add_argument("--predictor", choices=("surrogate", "remote"))
    p.add_argument("--endpoint", help="chat-completions base URL for --predictor remote")
    p.add_argument("--model", help="model name sent to the endpoint")
    p.add_argument("--timeout", type=float, help="per-request timeout in seconds")
    p.add_argument("--retries", type=int, help="retries on transport errors")
    p.add_argument("--cot", action="store_true", default=None, help="chain-of-thought prompts")
    p.add_argument("--workers", type=int, help="scenario-level worker threads")
    p.add_argument("--max-failure-rate", dest="max_failure_rate", type=float,
                   help="tolerated share of scenarios lost to endpoint failures")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onefeat", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, help_ in (
        ("eval", cmd_eval, "clean metrics (the no-attack rows)"),
        ("attack", cmd_attack, "one-feature DE attack campaign"),
        ("baseline", cmd_baseline, "random-perturbation baseline at the DE query budget"),
    ):
        p = sub.add_parser(name, help=help_)
        _campaign_flags(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("--out", required=True, help="output .jsonl")
    p.add_argument("--seed", type=int)
    p.add_argument("--preset", choices=("default", "planted"), default="default")
    p.add_argument("--size", type=int)
    p.add_argument("--planted-fraction", dest="planted_fraction", type=float)
    p.add_argument("--mix", type=float, nargs=3, metavar=("KL", "LC", "RC"))
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("extract", help="extract scenarios from a highD-style tracks CSV")
    p.add_argument("tracks", help="tracks CSV")
    p.add_argument("--out", required=True, help="output .jsonl")
    p.add_argument("--lane-convention", dest="lane_convention", default="auto",
                   choices=("auto", "left_decreasing", "left_increasing"))
    p.add_argument("--sliding-stride", dest="sliding_stride", type=float, help="extra anchors every N s")
    p.add_argument("--recording", help="id prefix (defaults to the file stem)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("report", help="merge attack results into one vulnerability report")
    p.add_argument("inputs", nargs="+", help="attack_results.jsonl files or campaign directories")
    p.add_argument("--out", required=True, help="output .csv or .json")
    p.add_argument("--format", choices=("csv", "json"))
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except EndpointFailure as exc:
        log.error("endpoint failure: %s", exc)
        return EXIT_ENDPOINT
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
