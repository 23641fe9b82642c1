"""Closeness testers under the A_k distance.

* ``simple_ak_tester``: the adjacent-label statistic Z on a merged, sorted
  Poissonized sample.
* ``flat_ak_tester``: a multi-scale L2 tester for nearly uniform pmfs.
* ``general_ak_tester``: Z first, then repeated random binning by mixture
  samples followed by the flat tester on the reduced pmfs.

Every decision is expressed as a score compared with a threshold so that the
harness can calibrate thresholds from null simulations. Scores are exact
reformulations of the voting rules: a majority-of-R vote over per-repetition
scores equals comparing the ``R // 2``-th order statistic (0-based, ascending)
with the threshold, and "NO if any level/iteration says NO" is a max.
"""

from __future__ import annotations

import enum
import functools
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .dist import (
    DiscretePmf,
    PiecewiseConstantDensity,
    as_density,
    mixture_half,
    sample_many,
)
from .metrics import IntervalPartition, _pmf_cdf, reduced_pmf

# Calibrated constants. The two thresholds are the null 7/8 quantiles found by
# harness.calibrate_thresholds(64, 0.5, 4000, seed=20261019) (1.625 and 0.992),
# rounded up; with them each stage's type-I error is about 1/8.
DEFAULT_C = 4.0
DEFAULT_SCALE_CONST = 1.0
DEFAULT_FLAT_SAMPLE_MULT = 16.0
DEFAULT_L2_THRESHOLD_FRAC = 1.0
CALIBRATED_Z_MULT = 1.65
# standalone L2 tester: threshold at half the statistic's expectation at the alternative boundary
L2_HALF_THRESHOLD = 0.5


class Decision(str, enum.Enum):
    YES = "YES"
    NO = "NO"


class Label(str, enum.Enum):
    P = "P"
    Q = "Q"


class LabeledSample(NamedTuple):
    value: float
    label: Label


class UnsortedInput(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class ApplicabilityWarning(UserWarning):
    pass


@dataclass
class Verdict:
    decision: Decision
    trace: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)

    @property
    def rejected(self) -> bool:
        return self.decision is Decision.NO

    def to_json(self) -> dict:
        return {"decision": self.decision.value, "trace": self.trace, "samples": self.samples}


@dataclass(frozen=True)
class TesterConfig:
    """Tester parameters.

    ``C`` scales the Z-stage sample size m = C k^(4/5) / eps^(6/5) and sets
    the stage-2 target eps / C and error budget 1 / C^2. ``scale_const`` is
    the (small) constant in the per-level flat-tester accuracy
    eps_j = scale_const * eps * 2^(3j/8). ``z_threshold_mult`` of None means
    3 for the simple tester and 5 for the general one.
    """

    k: int
    epsilon: float
    C: float = DEFAULT_C
    z_threshold_mult: float | None = None
    repetitions: int = 10
    j0_offset: int = 2
    scale_const: float = DEFAULT_SCALE_CONST
    flat_sample_mult: float = DEFAULT_FLAT_SAMPLE_MULT
    l2_threshold_frac: float = DEFAULT_L2_THRESHOLD_FRAC
    calibration: dict = field(default_factory=dict, compare=False)

    __test__ = False  # keep pytest from collecting this as a test class

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 2:
            raise ValueError(f"k must be an integer >= 2, got {self.k}")
        if not 0 < self.epsilon <= 2:
            raise ValueError(f"epsilon must lie in (0, 2], got {self.epsilon}")
        for name in ("C", "scale_const", "flat_sample_mult", "l2_threshold_frac"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.z_threshold_mult is not None and not self.z_threshold_mult > 0:
            raise ValueError("z_threshold_mult must be positive")
        if self.repetitions < 1 or self.j0_offset < 0:
            raise ValueError("repetitions must be >= 1 and j0_offset >= 0")

    @property
    def m(self) -> float:
        return z_stage_size(self.k, self.epsilon, self.C)

    def z_mult(self, default: float) -> float:
        return default if self.z_threshold_mult is None else self.z_threshold_mult

    def with_overrides(self, **kw) -> "TesterConfig":
        return replace(self, **kw)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "TesterConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)


def calibrated_config(k: int, epsilon: float, **overrides) -> TesterConfig:
    """Config with the calibrated Z threshold instead of the literal 3 / 5 multipliers."""
    overrides.setdefault("z_threshold_mult", CALIBRATED_Z_MULT)
    return TesterConfig(k=k, epsilon=epsilon, **overrides)


def z_stage_size(k: int, eps: float, C: float) -> float:
    return C * k**0.8 / eps**1.2


# ---------------------------------------------------------------- Z statistic


def z_from_labels(is_p: np.ndarray) -> int:
    """Adjacent same-label pairs minus adjacent different-label pairs."""
    is_p = np.asarray(is_p, dtype=bool)
    if is_p.size < 2:
        return 0
    same = int(np.count_nonzero(is_p[1:] == is_p[:-1]))
    return 2 * same - (is_p.size - 1)


def z_statistic(samples: Sequence[LabeledSample]) -> int:
    values = [s.value for s in samples]
    for i in range(1, len(values)):
        if values[i] < values[i - 1]:
            raise UnsortedInput(f"sample {i} ({values[i]}) precedes a larger value")
    return z_from_labels(np.array([Label(s.label) is Label.P for s in samples], dtype=bool))


def merge_labels(xs: np.ndarray, ys: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sort the union of two samples, ties broken uniformly at random; True marks ``xs``."""
    values = np.concatenate([xs, ys])
    is_p = np.concatenate([np.ones(len(xs), bool), np.zeros(len(ys), bool)])
    order = np.lexsort((rng.random(values.size), values))
    return is_p[order]


def draw_z(p, q, m: float, rng: np.random.Generator) -> tuple[int, int, int]:
    """Draw Poi(m) samples from each of p and q; return (Z, |S_p|, |S_q|)."""
    p, q = as_density(p), as_density(q)
    n_p, n_q = int(rng.poisson(m)), int(rng.poisson(m))
    xs = sample_many(p, n_p, rng)
    ys = sample_many(q, n_q, rng)
    return z_from_labels(merge_labels(xs, ys, rng)), n_p, n_q


def _z_stage(p, q, m: float, mult: float, rng) -> tuple[bool, dict, dict]:
    z, n_p, n_q = draw_z(p, q, m, rng)
    score = z / math.sqrt(m) if m > 0 else 0.0
    trace = {"z": z, "m": m, "z_score": score, "z_threshold_mult": mult, "reject": bool(score > mult)}
    return score > mult, trace, {"z_p": n_p, "z_q": n_q}


def simple_ak_tester(p, q, cfg: TesterConfig, rng: np.random.Generator) -> Verdict:
    """NO iff Z > mult * sqrt(m) with m = C k^(4/5) / eps^(6/5)."""
    if cfg.epsilon < cfg.k ** (-1 / 6):
        warnings.warn(
            f"eps={cfg.epsilon} is below k^(-1/6)={cfg.k ** (-1 / 6):.3g}; "
            "the Z-only tester is not guaranteed in this regime",
            ApplicabilityWarning,
            stacklevel=2,
        )
    reject, trace, samples = _z_stage(p, q, cfg.m, cfg.z_mult(3.0), rng)
    return Verdict(Decision.NO if reject else Decision.YES, {"stage1": trace}, samples)


# ---------------------------------------------------------------- L2 closeness


def collision_statistic(x, y) -> np.ndarray:
    """sum_i (X_i - Y_i)^2 - X_i - Y_i along the last axis; unbiased for m^2 ||p - q||_2^2."""
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    return ((x - y) ** 2 - x - y).sum(axis=-1)


def repetitions_for(delta: float) -> int:
    """Odd repetition count for median amplification to confidence 1 - delta."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    r = max(1, math.ceil(math.log(1 / delta) / math.log(3) - 1e-12))
    return r if r % 2 else r + 1


def thin_counts(counts: np.ndarray, reps: int, rng: np.random.Generator) -> np.ndarray:
    """Split Poissonized counts into ``reps`` independent Poissonized groups.

    Each sample goes to a uniformly random group (sequential binomial
    splitting, equal in law to a multinomial split); shape ``(reps, n)``.
    """
    counts = np.asarray(counts, dtype=np.int64)
    out = np.empty((reps, counts.size), dtype=np.int64)
    left = counts
    for r in range(reps - 1):
        out[r] = rng.binomial(left, 1.0 / (reps - r))
        left = left - out[r]
    out[reps - 1] = left
    return out


def l2_closeness_tester(
    x_counts,
    y_counts,
    n: int,
    eps: float,
    delta: float,
    rng: np.random.Generator,
    *,
    m: float | None = None,
    threshold_frac: float = L2_HALF_THRESHOLD,
) -> Verdict:
    """Test p = q against ||p - q||_2 >= eps / sqrt(n) from Poissonized bin counts.

    One-dimensional counts are split by random thinning into
    ``repetitions_for(delta)`` independent repetitions; two-dimensional counts
    are taken as pre-drawn repetitions (one per row). Per repetition the
    collision statistic is compared with ``threshold_frac`` times its
    expectation m_r^2 eps^2 / n at the boundary of the alternative, where m_r
    is the expected per-side sample size of that repetition (``m`` defaults to
    the observed average). YES iff a strict majority stay at or below.
    """
    x = np.asarray(x_counts)
    y = np.asarray(y_counts)
    if x.shape != y.shape or x.ndim not in (1, 2) or x.shape[-1] != n:
        raise DimensionMismatch(f"count shapes {x.shape} and {y.shape} do not match n={n}")
    if m is None:
        m = 0.5 * (x.sum() + y.sum()) / (1 if x.ndim == 1 else x.shape[0])
    if x.ndim == 1:
        reps = repetitions_for(delta)
        x, y = thin_counts(x, reps, rng), thin_counts(y, reps, rng)
        m_rep = m / reps
    else:
        reps = x.shape[0]
        m_rep = m
    t = collision_statistic(x, y)
    expected_alt = m_rep**2 * eps**2 / n
    scores = t / expected_alt if expected_alt > 0 else np.zeros(reps)
    score = float(np.sort(scores)[reps // 2])
    accept = int(np.count_nonzero(scores <= threshold_frac)) * 2 > reps
    trace = {
        "statistics": [int(v) for v in t],
        "expected_alt": expected_alt,
        "score": score,
        "threshold_frac": threshold_frac,
        "repetitions": reps,
    }
    return Verdict(Decision.YES if accept else Decision.NO, trace, {"x": int(x.sum()), "y": int(y.sum())})


# ---------------------------------------------------------------- multi-scale flat tester


@dataclass(frozen=True)
class Level:
    j: int
    ell: int
    eps_j: float
    delta_j: float
    partition: IntervalPartition
    sample_free: bool


@dataclass(frozen=True)
class MultiScaleSchedule:
    k: int
    eps: float
    j0: int
    n: int
    levels: tuple

    @property
    def ells(self) -> tuple:
        return tuple(lv.ell for lv in self.levels)


def multiscale_schedule(
    k: int, eps: float, cfg: TesterConfig | None = None, *, scale_const: float | None = None, j0_offset: int | None = None
) -> MultiScaleSchedule:
    """Nested dyadic partitions of [n], n = k 2^j0, with per-level accuracy and error budgets."""
    if k < 2 or not 0 < eps <= 2:
        raise ValueError("need k >= 2 and 0 < eps <= 2")
    if scale_const is None:
        scale_const = cfg.scale_const if cfg is not None else DEFAULT_SCALE_CONST
    if j0_offset is None:
        j0_offset = cfg.j0_offset if cfg is not None else 2
    return _schedule(int(k), float(eps), float(scale_const), int(j0_offset))


@functools.lru_cache(maxsize=64)
def _schedule(k: int, eps: float, scale_const: float, j0_offset: int) -> MultiScaleSchedule:
    j0 = max(1, math.ceil(math.log2(1 / eps) - 1e-12) + j0_offset)
    n = k * 2**j0
    levels = []
    for j in range(j0):
        ell = k * 2**j
        eps_j = scale_const * eps * 2 ** (3 * j / 8)
        part = IntervalPartition(tuple(float(i * (n // ell)) for i in range(ell + 1)))
        levels.append(Level(j, ell, eps_j, 2.0**-j / 6, part, eps_j > 1))
    return MultiScaleSchedule(k, eps, j0, n, tuple(levels))


def level_sample_budget(schedule: MultiScaleSchedule) -> list[float]:
    """Per-level sample sizes sqrt(ell_j) / eps_j^2 * log(1/delta_j) the L2 tests would need alone."""
    return [
        0.0 if lv.sample_free else math.sqrt(lv.ell) / lv.eps_j**2 * math.log(1 / lv.delta_j)
        for lv in schedule.levels
    ]


def flat_sample_size(k: int, eps: float, mult: float) -> float:
    return mult * math.sqrt(k) / eps**2


def _finest_masses(pmf: DiscretePmf, schedule: MultiScaleSchedule) -> np.ndarray:
    """Masses of the finest level's groups after stretching [0, n_pmf] onto [0, n]."""
    finest = schedule.levels[-1]
    cuts = np.asarray(finest.partition.cuts) * (pmf.n / schedule.n)
    c = _pmf_cdf(pmf.masses, cuts)
    c[0], c[-1] = 0.0, 1.0
    return np.maximum(np.diff(c), 0.0)


def _as_pmf(d) -> DiscretePmf:
    if isinstance(d, DiscretePmf):
        return d
    return DiscretePmf(np.asarray(d, dtype=float))


def flat_ak_tester(
    p,
    q,
    k: int,
    eps: float,
    delta: float,
    rng: np.random.Generator,
    cfg: TesterConfig | None = None,
) -> Verdict:
    """Multi-scale L2 testing of two nearly uniform pmfs over [n] under A_k.

    The support is stretched onto [k 2^j0] (bins are split uniformly, which
    keeps A_k and near-uniformity), one Poissonized sample of expected size
    m = flat_sample_mult sqrt(k) / eps^2 per side is drawn at the finest level
    and aggregated to every coarser level, and each level runs the L2 tester
    at (ell_j, eps_j, delta_j). A repetition says NO iff some level does; the
    whole procedure is repeated ``repetitions_for(delta)`` times and the
    majority wins. Drawing Poisson counts per finest group is equal in law to
    binning individual draws.
    """
    p, q = _as_pmf(p), _as_pmf(q)
    if p.n != q.n:
        raise DimensionMismatch(f"pmfs over {p.n} and {q.n} bins")
    mult = cfg.flat_sample_mult if cfg is not None else DEFAULT_FLAT_SAMPLE_MULT
    frac = cfg.l2_threshold_frac if cfg is not None else DEFAULT_L2_THRESHOLD_FRAC
    schedule = multiscale_schedule(k, eps, cfg)
    m = flat_sample_size(k, eps, mult)
    fine_p = _finest_masses(p, schedule)
    fine_q = _finest_masses(q, schedule)
    finest_ell = schedule.levels[-1].ell
    reps = repetitions_for(delta) if delta < 1 else 1

    active = [lv for lv in schedule.levels if not lv.sample_free]
    # one repetition count serving every level: the one the smallest delta_j
    # needs; the shared sample is drawn pre-split into that many Poisson thinnings
    groups = max((repetitions_for(lv.delta_j) for lv in active), default=1)

    rep_scores, level_scores = [], []
    drawn_x = drawn_y = 0
    for _ in range(reps):
        x = rng.poisson(np.outer(np.full(groups, m / groups), fine_p))
        y = rng.poisson(np.outer(np.full(groups, m / groups), fine_q))
        drawn_x += int(x.sum())
        drawn_y += int(y.sum())
        scores = []
        for lv in active:
            shape = (groups, lv.ell, finest_ell // lv.ell)
            xj = x.reshape(shape).sum(axis=2)
            yj = y.reshape(shape).sum(axis=2)
            v = l2_closeness_tester(xj, yj, lv.ell, lv.eps_j, lv.delta_j, rng, m=m / groups, threshold_frac=frac)
            scores.append(v.trace["score"])
        level_scores.append(scores)
        rep_scores.append(max(scores) if scores else -math.inf)
    score = float(np.sort(rep_scores)[reps // 2])
    trace = {
        "score": score,
        "threshold_frac": frac,
        "m": m,
        "j0": schedule.j0,
        "n": schedule.n,
        "ells": list(schedule.ells),
        "sample_free": [lv.sample_free for lv in schedule.levels],
        "level_scores": level_scores,
    }
    decision = Decision.NO if score > frac else Decision.YES
    return Verdict(decision, trace, {"flat_p": drawn_x, "flat_q": drawn_y})


# ---------------------------------------------------------------- general tester


def random_binning(mix_samples) -> IntervalPartition:
    """Cut [0, 1] at the given points: r distinct interior points give r + 1 intervals."""
    s = np.unique(np.asarray(mix_samples, dtype=float))
    s = s[(s > 0.0) & (s < 1.0)]
    return IntervalPartition((0.0, *s.tolist(), 1.0))


def general_ak_tester(p, q, cfg: TesterConfig, rng: np.random.Generator) -> Verdict:
    """Z stage with threshold mult * sqrt(m) (default 5), then ``cfg.repetitions``
    rounds of random binning + flat tester at (2k+1, eps/C, 1/C^2)."""
    p, q = as_density(p), as_density(q)
    m = cfg.m
    reject, stage1, samples = _z_stage(p, q, m, cfg.z_mult(5.0), rng)
    trace = {"stage1": stage1}
    if reject:
        return Verdict(Decision.NO, trace, samples)

    mix = mixture_half(p, q)
    k2 = 2 * cfg.k + 1
    eps2 = cfg.epsilon / cfg.C
    delta2 = min(1.0, 1.0 / cfg.C**2)
    iterations = []
    samples.update(binning=0, flat_p=0, flat_q=0)
    verdict = Decision.YES
    for _ in range(cfg.repetitions):
        cuts = sample_many(mix, int(rng.poisson(m)), rng)
        part = random_binning(cuts)
        pr, qr = reduced_pmf(p, part), reduced_pmf(q, part)
        v = flat_ak_tester(pr, qr, k2, eps2, delta2, rng, cfg)
        samples["binning"] += cuts.size
        samples["flat_p"] += v.samples["flat_p"]
        samples["flat_q"] += v.samples["flat_q"]
        iterations.append({"bins": len(part), "score": v.trace["score"], "decision": v.decision.value})
        if v.rejected:
            verdict = Decision.NO
            break
    trace["stage2"] = {
        "k": k2,
        "eps": eps2,
        "delta": delta2,
        "score": max(it["score"] for it in iterations),
        "threshold_frac": cfg.l2_threshold_frac,
        "iterations": iterations,
    }
    return Verdict(verdict, trace, samples)


def stage2_null_score(p, q, cfg: TesterConfig, rng: np.random.Generator) -> float:
    """Stage-2 score with every iteration run (no early exit); used for calibration."""
    p, q = as_density(p), as_density(q)
    mix = mixture_half(p, q)
    k2, eps2, delta2 = 2 * cfg.k + 1, cfg.epsilon / cfg.C, min(1.0, 1.0 / cfg.C**2)
    best = -math.inf
    for _ in range(cfg.repetitions):
        part = random_binning(sample_many(mix, int(rng.poisson(cfg.m)), rng))
        v = flat_ak_tester(reduced_pmf(p, part), reduced_pmf(q, part), k2, eps2, delta2, rng, cfg)
        best = max(best, v.trace["score"])
    return best


def expected_sample_budget(cfg: TesterConfig) -> dict:
    """Expected samples drawn by the general tester when every stage runs in full."""
    m = cfg.m
    k2, eps2 = 2 * cfg.k + 1, cfg.epsilon / cfg.C
    reps = repetitions_for(min(1.0, 1 / cfg.C**2)) if cfg.C > 1 else 1
    flat = flat_sample_size(k2, eps2, cfg.flat_sample_mult) * reps
    total = 2 * m + cfg.repetitions * (m + 2 * flat)
    return {"z_stage": 2 * m, "binning": cfg.repetitions * m, "flat": cfg.repetitions * 2 * flat, "total": total}
