"""Labeled (p, q) instance pairs: lower-bound hard constructions, random flat pairs, class -> k registry."""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .dist import PiecewiseConstantDensity, from_masses, make_pwc
from .metrics import ak_distance_pwc

AK_VERIFY_TOL = 1e-9
MAX_REJECTIONS = 10_000

# mass on the three equal-width thirds of a mini-bucket, as fractions of eps/k;
# None means height 1 (no mini-bucket structure)
_FLANKS = (0.5, 0.0, 0.5)
_MIDDLE = (0.0, 1.0, 0.0)
_FLAT = None


class GenerationTimeout(RuntimeError):
    pass


@dataclass(frozen=True)
class Identical:
    pass


@dataclass(frozen=True)
class Far:
    k_certified: int
    ak_value: float


@dataclass
class InstancePair:
    p: PiecewiseConstantDensity
    q: PiecewiseConstantDensity
    truth: Identical | Far
    provenance: dict = field(default_factory=dict)

    @property
    def is_far(self) -> bool:
        return isinstance(self.truth, Far)

    def to_manifest(self) -> dict:
        if self.is_far:
            truth = {"label": "far", "k_certified": self.truth.k_certified, "ak_value": self.truth.ak_value}
        else:
            truth = {"label": "identical"}
        return {"truth": truth, "provenance": self.provenance}


def identical_pair(d: PiecewiseConstantDensity, provenance: dict | None = None) -> InstancePair:
    return InstancePair(d, d, Identical(), provenance or {"construction": "identical"})


def _certify(p, q, k: int, provenance: dict) -> InstancePair:
    return InstancePair(p, q, Far(k, ak_distance_pwc(p, q, k)), provenance)


def _height(thirds, t: int, mass: float, width: float) -> float:
    return 1.0 if thirds is None else thirds[t] * mass / width


def _buckets(k: int, eps: float, p_thirds, q_thirds, prefixes=None):
    """k buckets of width 1/k: [shared prefix] mini-bucket (3 thirds) [shared suffix].

    Shared segments have height 1 under both densities; empty ones are skipped.
    Mini-bucket heights are mass / (actual float width) so that rounding in
    the breakpoints cannot accumulate into the total mass.
    """
    bps = [0.0]
    hp: list[float] = []
    hq: list[float] = []

    def push(end: float, a: float, b: float):
        if end > bps[-1]:
            bps.append(end)
            hp.append(a)
            hq.append(b)

    third = eps / (3 * k)
    for j in range(k):
        start = j / k
        mb = start + (0.0 if prefixes is None else prefixes[j])
        push(mb, 1.0, 1.0)
        for t in range(3):
            end = mb + (t + 1) * third if t < 2 else mb + eps / k
            w = end - bps[-1]
            push(end, _height(p_thirds, t, eps / k, w), _height(q_thirds, t, eps / k, w))
        push((j + 1) / k if j < k - 1 else 1.0, 1.0, 1.0)
    bps[-1] = 1.0
    return make_pwc(bps, hp), make_pwc(bps, hq)


def regime_a_pair(k: int, eps: float) -> InstancePair:
    """k buckets, each a mini-bucket (p on the flanks, q in the middle) then a shared segment.

    The mini-bucket takes the first eps-fraction of its bucket. The difference
    has 2k+1 sign runs, so the certified A_{2k+1} distance equals L1 = 2*eps.
    Intended for eps = Omega(k^(-1/6)); that applicability bound is recorded,
    not enforced.
    """
    if not (0 < eps <= 1) or k < 1:
        raise ValueError("need k >= 1 and 0 < eps <= 1")
    p, q = _buckets(k, eps, _FLANKS, _MIDDLE)
    prov = {
        "construction": "regimeA",
        "k": k,
        "eps": eps,
        "eps_lower_bound": k ** (-1 / 6),
    }
    return _certify(p, q, 2 * k + 1, prov)


def regime_b_pair(k: int, eps: float, x_is_null: bool, rng: np.random.Generator) -> InstancePair:
    """k macro-buckets of mass 1/k with a randomly placed mini-bucket in each.

    Each bucket draws a shared prefix of mass x ~ U[0, (1-eps)/k]. Under the
    null the mini-bucket is flat for both densities and the same object is
    returned for p and q; otherwise q holds the flanks and p the middle.
    """
    if not (0 < eps <= 1) or k < 1:
        raise ValueError("need k >= 1 and 0 < eps <= 1")
    prefixes = rng.uniform(0.0, (1 - eps) / k, size=k)
    prov = {"construction": "regimeB", "k": k, "eps": eps, "x_is_null": bool(x_is_null)}
    if x_is_null:
        p, _ = _buckets(k, eps, _FLAT, _FLAT, prefixes)
        return InstancePair(p, p, Identical(), prov)
    p, q = _buckets(k, eps, _MIDDLE, _FLANKS, prefixes)
    return _certify(p, q, 2 * k + 1, prov)


def minibucket_order_distribution(r: int, outer: str = "P") -> dict:
    """Exact law of the label sequence of r ordered draws from a mini-bucket.

    Under the far structure a draw lands in the thirds with probabilities
    (1/4, 1/2, 1/4) of the mixture, and its label is fixed by the third
    (``outer`` on the flanks, the other label in the middle); sorting puts
    the draws in third order. Under p = q every label is a fair coin.
    Returns both laws (dicts keyed by label strings, Fraction values) and
    their total-variation distance.
    """
    if not 0 <= r <= 4:
        raise ValueError("r must be in 0..4")
    inner = "Q" if outer == "P" else "P"
    probs = (Fraction(1, 4), Fraction(1, 2), Fraction(1, 4))
    labels = (outer, inner, outer)
    far: dict[str, Fraction] = {}
    for thirds in itertools.product(range(3), repeat=r):
        pr = math.prod((probs[t] for t in thirds), start=Fraction(1))
        seq = "".join(labels[t] for t in sorted(thirds))
        far[seq] = far.get(seq, Fraction(0)) + pr
    null = {"".join(s): Fraction(1, 2**r) for s in itertools.product("PQ", repeat=r)}
    keys = set(far) | set(null)
    tv = sum((abs(far.get(s, Fraction(0)) - null.get(s, Fraction(0))) for s in keys), Fraction(0)) / 2
    return {"far": far, "null": null, "tv": tv}


def random_flat_density(t: int, rng: np.random.Generator, alpha: float = 1.0, breakpoints=None) -> PiecewiseConstantDensity:
    """A random density with at most t pieces: uniform random breakpoints, Dirichlet masses."""
    if breakpoints is None:
        breakpoints = _random_grid(t, rng)
    masses = rng.dirichlet(np.full(len(breakpoints) - 1, alpha))
    return from_masses(breakpoints, masses)


def _random_grid(t: int, rng: np.random.Generator) -> np.ndarray:
    while True:
        inner = np.sort(rng.random(t - 1))
        grid = np.concatenate([[0.0], inner, [1.0]])
        if np.all(np.diff(grid) > 0):
            return grid


def gen_flat_pair(t: int, eps: float, rng: np.random.Generator, alpha: float = 0.5) -> InstancePair:
    """Two random t-flat densities on a shared grid with A_{2t} >= eps.

    Rejection-samples fresh grids and masses; raises GenerationTimeout after
    ``MAX_REJECTIONS`` failures (always the case for t = 1).
    """
    if t < 1 or not 0 < eps < 2:
        raise ValueError("need t >= 1 and 0 < eps < 2")
    for attempt in range(MAX_REJECTIONS):
        grid = _random_grid(t, rng)
        p = random_flat_density(t, rng, alpha, grid)
        q = random_flat_density(t, rng, alpha, grid)
        dist = ak_distance_pwc(p, q, 2 * t)
        if dist >= eps:
            prov = {"construction": "flatpair", "t": t, "eps": eps, "attempts": attempt + 1}
            return InstancePair(p, q, Far(2 * t, dist), prov)
    raise GenerationTimeout(f"no {t}-flat pair with A_{2 * t} >= {eps} after {MAX_REJECTIONS} tries")


# ---------------------------------------------------------------- class registry


class Family(enum.Enum):
    T_FLAT = "tFlat"
    T_PIECEWISE_DEGREE = "tPiecewiseDegree"
    LOG_CONCAVE = "LogConcave"
    LOG_CONCAVE_MIXTURE = "LogConcaveMixture"
    T_MODAL = "tModal"
    MHR = "MHR"


@dataclass(frozen=True)
class ClassSpec:
    family: Family
    t: int | None = None
    d: int | None = None
    kmix: int | None = None
    n: int | None = None

    def __post_init__(self):
        for name in ("t", "d", "kmix", "n"):
            v = getattr(self, name)
            if v is not None and (not isinstance(v, int) or v < (0 if name == "d" else 1)):
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        required = {
            Family.T_FLAT: ("t",),
            Family.T_PIECEWISE_DEGREE: ("t", "d"),
            Family.LOG_CONCAVE: (),
            Family.LOG_CONCAVE_MIXTURE: ("kmix",),
            Family.T_MODAL: ("t", "n"),
            Family.MHR: ("n",),
        }[self.family]
        missing = [r for r in required if getattr(self, r) is None]
        if missing:
            raise ValueError(f"{self.family.value} needs {', '.join(missing)}")


def class_k(spec: ClassSpec, eps: float) -> int:
    """The A_k parameter that makes A_k distance an eps/2-proxy for L1 on the class.

    Sample-complexity rows for each family are of the form
    max{k^(4/5)/eps^(6/5), k^(1/2)/eps^2}; the k values below are the ones
    that reproduce those rows on substitution.
    """
    if not 0 < eps < 2:
        raise ValueError("eps must lie in (0, 2)")
    f = spec.family
    if f is Family.T_FLAT:
        # p - q for two t-flat densities changes sign at most 2t - 1 times
        return 2 * spec.t
    if f is Family.T_PIECEWISE_DEGREE:
        return 2 * spec.t * (spec.d + 1)
    if f is Family.LOG_CONCAVE:
        # k = eps^(-1/2) turns k^(1/2)/eps^2 into eps^(-9/4)
        return math.ceil(eps ** -0.5)
    if f is Family.LOG_CONCAVE_MIXTURE:
        return spec.kmix * math.ceil(eps ** -0.5)
    if f is Family.T_MODAL:
        # k = t log n / eps gives (t log n)^(4/5)/eps^2 and (t log n)^(1/2)/eps^(5/2)
        return math.ceil(spec.t * math.log2(spec.n) / eps)
    if f is Family.MHR:
        return math.ceil(math.log2(spec.n / eps) / eps)
    raise ValueError(f"unknown family {f}")


def sample_complexity_shape(k: float, eps: float) -> float:
    """max{k^(4/5)/eps^(6/5), k^(1/2)/eps^2}, constants dropped."""
    return max(k**0.8 / eps**1.2, k**0.5 / eps**2)
