"""Seeded Monte Carlo experiments: trials, threshold calibration, sample-complexity sweeps, reports.

Every random draw comes from ``rng_stream(master_seed, ...)`` keyed by what it
is for, so results are a pure function of the configuration and seed and do
not depend on worker count or scheduling order.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from statsmodels.stats.proportion import proportion_confint

from . import dist
from .dist import PiecewiseConstantDensity, rng_stream, uniform
from .instances import (
    Far,
    Identical,
    InstancePair,
    gen_flat_pair,
    identical_pair,
    random_flat_density,
    regime_a_pair,
    regime_b_pair,
)
from .metrics import IntervalPartition, ak_distance_pwc, reduced_pmf
from .testers import (
    TesterConfig,
    Verdict,
    draw_z,
    flat_ak_tester,
    general_ak_tester,
    multiscale_schedule,
    simple_ak_tester,
    stage2_null_score,
)

# stream purposes under a trial index
INSTANCE_STREAM = 0
TESTER_STREAM = 1

MIN_CALIBRATION_TRIALS = 1000
CSV_FIELDS = ("tester", "k", "eps", "m", "trials", "reject_rate", "ci_lo", "ci_hi", "seed")


class ConfigError(ValueError):
    pass


class TrialError(RuntimeError):
    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"trial {index} failed: {type(cause).__name__}: {cause}")
        self.index = index
        self.cause = cause


class ReportError(OSError):
    pass


# ---------------------------------------------------------------- testers and instances


def _flat_on_densities(p, q, cfg: TesterConfig, rng) -> Verdict:
    """Flat tester on densities: reduce both to the schedule's n equal-width bins first."""
    n = multiscale_schedule(cfg.k, cfg.epsilon, cfg).n
    part = IntervalPartition.uniform(n)
    return flat_ak_tester(reduced_pmf(p, part), reduced_pmf(q, part), cfg.k, cfg.epsilon, 1 / 3, rng, cfg)


TESTERS: dict[str, Callable] = {
    "simple": simple_ak_tester,
    "flat": _flat_on_densities,
    "general": general_ak_tester,
}


def build_instance(source, rng: np.random.Generator) -> InstancePair:
    """Materialize an instance source.

    ``source`` is an ``InstancePair`` (used as is) or a dict with key
    ``construction`` in {regimeA, regimeB, flatpair, identical, files} plus
    that construction's parameters. Random constructions draw from ``rng``.
    """
    if isinstance(source, InstancePair):
        return source
    if not isinstance(source, dict) or "construction" not in source:
        raise ConfigError("instance source must be an InstancePair or a dict with 'construction'")
    kind = source["construction"]
    try:
        if kind == "regimeA":
            return regime_a_pair(int(source["k"]), float(source["eps"]))
        if kind == "regimeB":
            null = source.get("x_is_null")
            if null is None:
                null = bool(rng.integers(2))
            return regime_b_pair(int(source["k"]), float(source["eps"]), bool(null), rng)
        if kind == "flatpair":
            return gen_flat_pair(int(source["t"]), float(source["eps"]), rng)
        if kind == "identical":
            t = source.get("t")
            d = uniform() if t is None else random_flat_density(int(t), rng)
            return identical_pair(d, {"construction": "identical", "t": t})
        if kind == "files":
            p = dist.as_density(dist.load(source["p"]))
            q = dist.as_density(dist.load(source["q"]))
            prov = {"construction": "files", "p": str(source["p"]), "q": str(source["q"])}
            if p == q:
                return identical_pair(p, prov)
            k = int(source["k"])
            return InstancePair(p, q, Far(k, ak_distance_pwc(p, q, k)), prov)
    except KeyError as e:
        raise ConfigError(f"construction {kind!r} needs parameter {e.args[0]!r}") from None
    raise ConfigError(f"unknown construction {kind!r}")


# ---------------------------------------------------------------- trials


@dataclass(frozen=True)
class ExperimentConfig:
    tester: str
    instance: object
    k: int
    eps: float
    trials: int
    master_seed: int = 0
    overrides: dict = field(default_factory=dict)
    parallelism: int = 1
    fixed_instance: bool = False

    def __post_init__(self):
        if self.tester not in TESTERS:
            raise ConfigError(f"unknown tester {self.tester!r}; choose from {sorted(TESTERS)}")
        if int(self.trials) != self.trials or self.trials < 1:
            raise ConfigError(f"trials must be a positive integer, got {self.trials}")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")
        self.tester_config()

    def tester_config(self) -> TesterConfig:
        try:
            return TesterConfig(k=self.k, epsilon=self.eps, **self.overrides)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad tester configuration: {e}") from None


@dataclass
class TrialRecord:
    index: int
    decision: str
    trace: dict
    samples: dict
    wall_time: float = field(default=0.0, compare=False)

    @property
    def rejected(self) -> bool:
        return self.decision == "NO"

    def to_json(self) -> dict:
        # wall time is left out so that reports are byte-reproducible
        return {"index": self.index, "decision": self.decision, "trace": self.trace, "samples": self.samples}


def run_trial(cfg: ExperimentConfig, index: int, instance: InstancePair | None = None) -> TrialRecord:
    """One trial, reproducible from (cfg, index) alone."""
    start = time.perf_counter()
    try:
        if instance is None:
            instance = build_instance(cfg.instance, rng_stream(cfg.master_seed, index, INSTANCE_STREAM))
        tester = TESTERS[cfg.tester]
        verdict = tester(instance.p, instance.q, cfg.tester_config(), rng_stream(cfg.master_seed, index, TESTER_STREAM))
    except Exception as e:  # noqa: BLE001 - re-raised with the trial index attached
        raise TrialError(index, e) from e
    trace = dict(verdict.trace)
    trace["truth"] = "far" if isinstance(instance.truth, Far) else "identical"
    return TrialRecord(index, verdict.decision.value, trace, verdict.samples, time.perf_counter() - start)


def _run_chunk(args) -> list[TrialRecord]:
    cfg, indices, instance = args
    return [run_trial(cfg, i, instance) for i in indices]


def run_trials(cfg: ExperimentConfig) -> list[TrialRecord]:
    """Run ``cfg.trials`` trials, in a process pool when ``parallelism > 1``.

    With ``fixed_instance`` the instance is built once from stream
    ``(master_seed, 2**32)`` and shared by all trials.
    """
    instance = None
    if cfg.fixed_instance:
        instance = build_instance(cfg.instance, rng_stream(cfg.master_seed, 2**32, INSTANCE_STREAM))
    indices = list(range(cfg.trials))
    if cfg.parallelism == 1:
        return _run_chunk((cfg, indices, instance))
    chunks = [indices[i :: cfg.parallelism] for i in range(cfg.parallelism)]
    with ProcessPoolExecutor(max_workers=cfg.parallelism) as pool:
        parts = list(pool.map(_run_chunk, [(cfg, c, instance) for c in chunks if c]))
    return sorted((r for part in parts for r in part), key=lambda r: r.index)


def wilson_interval(successes: int, trials: int) -> tuple[float, float]:
    if trials < 1:
        raise ValueError("need at least one trial")
    lo, hi = proportion_confint(successes, trials, alpha=0.05, method="wilson")
    return float(lo), float(hi)


# ---------------------------------------------------------------- reports


@dataclass
class SweepRow:
    tester: str
    k: int
    eps: float
    m: float
    trials: int
    reject_rate: float
    ci_lo: float
    ci_hi: float
    seed: int
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_counts(cls, tester, k, eps, m, rejections, trials, seed, extra=None) -> "SweepRow":
        lo, hi = wilson_interval(rejections, trials)
        return cls(tester, int(k), float(eps), float(m), int(trials), rejections / trials, lo, hi, int(seed), extra or {})


@dataclass
class SweepResult:
    rows: list
    summary: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows], "summary": self.summary}

    @classmethod
    def from_json(cls, obj: dict) -> "SweepResult":
        return cls([SweepRow(**r) for r in obj["rows"]], obj.get("summary", {}))


def summarize_trials(cfg: ExperimentConfig, records: list[TrialRecord]) -> SweepResult:
    """Aggregate trial records into a one-row result that keeps the full traces."""
    rejections = sum(r.rejected for r in records)
    row = SweepRow.from_counts(
        cfg.tester,
        cfg.k,
        cfg.eps,
        cfg.tester_config().m,
        rejections,
        len(records),
        cfg.master_seed,
        {"traces": [r.to_json() for r in records]},
    )
    return SweepResult([row], {"rejections": rejections})


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def render_report(result: SweepResult, fmt: str) -> str:
    if not result.rows:
        raise ReportError("no results to report")
    if fmt == "json":
        return _dumps(result.to_json())
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in result.rows:
            w.writerow([getattr(r, f) if not isinstance(getattr(r, f), float) else repr(getattr(r, f)) for f in CSV_FIELDS])
        return buf.getvalue()
    raise ReportError(f"unknown report format {fmt!r}")


def emit_report(result: SweepResult, fmt: str, path: str | Path) -> Path:
    """Write ``result`` as CSV or JSON. Nothing is written if rendering fails."""
    text = render_report(result, fmt)
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as e:
        raise ReportError(f"cannot write {path}: {e}") from e
    return path


def read_report(path: str | Path) -> SweepResult:
    return SweepResult.from_json(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------- calibration


def _seed_of(rng) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(2**63))
    return int(rng)


def null_scores(k: int, eps: float, trials: int, seed: int, base: TesterConfig | None = None, stages=("z", "l2")):
    """Null (p = q = uniform) stage scores: Z / sqrt(m) and the stage-2 score, per trial."""
    cfg = base or TesterConfig(k=k, epsilon=eps)
    u = uniform()
    z, l2 = [], []
    for i in range(trials):
        rng = rng_stream(seed, i)
        if "z" in stages:
            z.append(draw_z(u, u, cfg.m, rng)[0] / math.sqrt(cfg.m))
        if "l2" in stages:
            l2.append(stage2_null_score(u, u, cfg, rng))
    return np.array(z), np.array(l2)


def calibrate_thresholds(
    k: int,
    eps: float,
    trials: int,
    rng,
    *,
    target: float = 0.125,
    base: TesterConfig | None = None,
    stages=("z", "l2"),
) -> TesterConfig:
    """Set the stage thresholds at the null's empirical (1 - target) quantiles.

    The null is p = q = uniform. For continuous p = q both stages' null laws
    do not depend on p (the Z label sequence is i.i.d. fair coins, and random
    binning by mixture samples gives the same reduced pmf law for every p), so
    thresholds set here carry over to any identical pair. With the default
    target of 1/8 per stage the general tester's type-I error is at most 1/4.
    """
    if trials < MIN_CALIBRATION_TRIALS:
        raise ConfigError(f"calibration needs at least {MIN_CALIBRATION_TRIALS} trials")
    if not 0 < target < 1:
        raise ConfigError("target must lie in (0, 1)")
    cfg = base or TesterConfig(k=k, epsilon=eps)
    seed = _seed_of(rng)
    z, l2 = null_scores(k, eps, trials, seed, cfg, stages)
    updates, info = {}, {"target": target, "trials": trials, "seed": seed, "m": cfg.m}
    if z.size:
        # Z / sqrt(m) takes values on a lattice; keep the threshold strictly positive
        zq = float(np.quantile(z, 1 - target, method="higher"))
        updates["z_threshold_mult"] = max(zq, 1e-9)
        info["z_quantile"] = zq
        info["z_null_reject"] = float(np.mean(z > updates["z_threshold_mult"]))
    if l2.size:
        lq = float(np.quantile(l2, 1 - target, method="higher"))
        updates["l2_threshold_frac"] = max(lq, 1e-9)
        info["l2_quantile"] = lq
        info["l2_null_reject"] = float(np.mean(l2 > updates["l2_threshold_frac"]))
    return cfg.with_overrides(calibration=info, **updates)


# ---------------------------------------------------------------- sample-complexity sweep


def rejection_rate(
    pair: InstancePair, tester: str, cfg: TesterConfig, trials: int, seed: int, key: tuple
) -> tuple[int, int]:
    fn = TESTERS[tester]
    hits = sum(fn(pair.p, pair.q, cfg, rng_stream(seed, *key, i)).rejected for i in range(trials))
    return hits, trials


def _c_for_m(k: int, eps: float, m: float) -> float:
    return m * eps**1.2 / k**0.8


def sweep_sample_complexity(
    k_grid,
    eps: float,
    trials: int,
    rng,
    *,
    tester: str = "simple",
    z_threshold_mult: float | None = None,
    m_start: int = 8,
    m_max: int = 2**20,
    refine_rounds: int = 3,
) -> SweepResult:
    """Estimate the smallest m that separates regime-A pairs from the null, per k.

    Passing at m means rejection rate >= 2/3 on ``regime_a_pair(k, eps)`` and
    <= 1/3 on p = q = uniform. m doubles from ``m_start`` until it passes, then
    ``refine_rounds`` geometric bisections narrow the bracket; m* is the upper
    end (an estimate, not an exact threshold). The Z threshold defaults to the
    normal-approximation 7/8 quantile 1.15 * sqrt(2) per sqrt(m). Every
    evaluated (k, m) point becomes a row; the summary holds m*(k) and the
    least-squares slope of log m* on log k.
    """
    k_grid = [int(k) for k in k_grid]
    if not k_grid:
        raise ConfigError("k grid must be nonempty")
    if tester not in TESTERS:
        raise ConfigError(f"unknown tester {tester!r}")
    seed = _seed_of(rng)
    zmult = 1.15 * math.sqrt(2) if z_threshold_mult is None else z_threshold_mult
    u = identical_pair(uniform())
    rows, m_star = [], {}

    def evaluate(k, pair, m):
        m = int(round(m))
        cfg = TesterConfig(k=k, epsilon=eps, C=_c_for_m(k, eps, m), z_threshold_mult=zmult)
        far, _ = rejection_rate(pair, tester, cfg, trials, seed, (k, m, 1))
        null, _ = rejection_rate(u, tester, cfg, trials, seed, (k, m, 0))
        lo, hi = wilson_interval(null, trials)
        rows.append(
            SweepRow.from_counts(
                tester, k, eps, m, far, trials, seed,
                {"null_reject_rate": null / trials, "null_ci_lo": lo, "null_ci_hi": hi},
            )
        )
        return far / trials >= 2 / 3 and null / trials <= 1 / 3

    for k in k_grid:
        pair = regime_a_pair(k, eps)
        lo, hi = None, float(m_start)
        while not evaluate(k, pair, hi):
            lo, hi = hi, hi * 2
            if hi > m_max:
                raise ConfigError(f"no passing m <= {m_max} for k={k}")
        if lo is not None:
            for _ in range(refine_rounds):
                mid = math.sqrt(lo * hi)
                if int(round(mid)) in (int(round(lo)), int(round(hi))):
                    break
                if evaluate(k, pair, mid):
                    hi = mid
                else:
                    lo = mid
        m_star[k] = int(round(hi))
    summary = {"m_star": {str(k): v for k, v in m_star.items()}, "eps": eps, "z_threshold_mult": zmult}
    if len(m_star) >= 2:
        x = np.log([float(k) for k in m_star])
        y = np.log([float(v) for v in m_star.values()])
        summary["slope"] = float(np.polyfit(x, y, 1)[0])
    return SweepResult(rows, summary)
