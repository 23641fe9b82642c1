"""Piecewise-constant densities on [0, 1], discrete pmfs, and seeded random streams."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

MASS_TOL = 1e-12


class DistributionError(ValueError):
    """Base class for invalid distribution inputs."""


class NonAscendingBreakpoints(DistributionError):
    def __init__(self, index: int, message: str | None = None):
        self.index = index
        super().__init__(message or f"breakpoints not strictly ascending at index {index}")


class NegativeHeight(DistributionError):
    def __init__(self, index: int, value: float):
        self.index = index
        self.value = value
        super().__init__(f"negative height {value!r} at index {index}")


class MassNotOne(DistributionError):
    def __init__(self, integral: float):
        self.integral = integral
        super().__init__(f"total mass is {integral!r}, expected 1")


class DegenerateSupport(DistributionError):
    pass


def rng_stream(master_seed: int, *index: int) -> np.random.Generator:
    """Deterministic generator for ``(master_seed, index...)``.

    Streams with different indices are statistically independent; the same
    key always reproduces the same draws.
    """
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(i) for i in index))
    return np.random.Generator(np.random.PCG64(seq))


@dataclass(frozen=True, eq=False)
class PiecewiseConstantDensity:
    """A density on [0, 1] that is constant on each ``[breakpoints[i], breakpoints[i+1])``."""

    breakpoints: np.ndarray
    heights: np.ndarray

    def __post_init__(self):
        b = np.array(self.breakpoints, dtype=np.float64)
        h = np.array(self.heights, dtype=np.float64)
        if b.ndim != 1 or h.ndim != 1 or b.size < 2:
            raise DistributionError("breakpoints and heights must be 1-D with at least one piece")
        if h.size != b.size - 1:
            raise DistributionError(
                f"need len(heights) == len(breakpoints) - 1, got {h.size} and {b.size}"
            )
        if b[0] != 0.0:
            raise NonAscendingBreakpoints(0, f"first breakpoint must be 0, got {b[0]!r}")
        if b[-1] != 1.0:
            raise NonAscendingBreakpoints(b.size - 1, f"last breakpoint must be 1, got {b[-1]!r}")
        bad = np.flatnonzero(~(np.diff(b) > 0))
        if bad.size:
            raise NonAscendingBreakpoints(int(bad[0]) + 1)
        neg = np.flatnonzero(~(h >= 0))
        if neg.size:
            raise NegativeHeight(int(neg[0]), float(h[neg[0]]))
        total = math.fsum(h * np.diff(b))
        if abs(total - 1.0) > MASS_TOL:
            raise MassNotOne(total)
        b.flags.writeable = False
        h.flags.writeable = False
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "heights", h)

    @property
    def n_pieces(self) -> int:
        return self.heights.size

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    @property
    def masses(self) -> np.ndarray:
        return self.heights * self.widths

    def cumulative(self) -> np.ndarray:
        """CDF at each breakpoint, pinned to exactly 0 and 1 at the ends."""
        c = np.empty(self.breakpoints.size)
        c[0] = 0.0
        c[1:] = np.cumsum(self.masses)
        c[-1] = 1.0
        return c

    def density_at(self, x) -> np.ndarray:
        idx = np.clip(np.searchsorted(self.breakpoints, x, side="right") - 1, 0, self.n_pieces - 1)
        return self.heights[idx]

    def to_json(self) -> dict:
        return {"breakpoints": self.breakpoints.tolist(), "heights": self.heights.tolist()}

    def __eq__(self, other):
        if not isinstance(other, PiecewiseConstantDensity):
            return NotImplemented
        return np.array_equal(self.breakpoints, other.breakpoints) and np.array_equal(
            self.heights, other.heights
        )

    __hash__ = object.__hash__


@dataclass(frozen=True, eq=False)
class DiscretePmf:
    masses: np.ndarray

    def __post_init__(self):
        m = np.array(self.masses, dtype=np.float64)
        if m.ndim != 1 or m.size == 0:
            raise DistributionError("masses must be a non-empty 1-D array")
        neg = np.flatnonzero(~(m >= 0))
        if neg.size:
            raise NegativeHeight(int(neg[0]), float(m[neg[0]]))
        total = math.fsum(m)
        if abs(total - 1.0) > MASS_TOL:
            raise MassNotOne(total)
        m.flags.writeable = False
        object.__setattr__(self, "masses", m)

    @property
    def n(self) -> int:
        return self.masses.size

    def to_json(self) -> dict:
        return {"masses": self.masses.tolist()}

    def __eq__(self, other):
        if not isinstance(other, DiscretePmf):
            return NotImplemented
        return np.array_equal(self.masses, other.masses)

    __hash__ = object.__hash__


def make_pwc(breakpoints: Sequence[float], heights: Sequence[float]) -> PiecewiseConstantDensity:
    return PiecewiseConstantDensity(np.asarray(breakpoints, float), np.asarray(heights, float))


def uniform() -> PiecewiseConstantDensity:
    return make_pwc([0.0, 1.0], [1.0])


def from_masses(breakpoints: Sequence[float], masses: Sequence[float]) -> PiecewiseConstantDensity:
    """Build a density from per-piece masses instead of heights."""
    b = np.asarray(breakpoints, float)
    return make_pwc(b, np.asarray(masses, float) / np.diff(b))


def rescale_to_unit(breakpoints: Sequence[float], heights: Sequence[float]) -> PiecewiseConstantDensity:
    """Affinely map a piecewise-constant density on ``[a, b]`` onto [0, 1]."""
    b = np.asarray(breakpoints, float)
    lo, hi = b[0], b[-1]
    if not hi > lo:
        raise NonAscendingBreakpoints(b.size - 1)
    unit = (b - lo) / (hi - lo)
    unit[0], unit[-1] = 0.0, 1.0
    return make_pwc(unit, np.asarray(heights, float) * (hi - lo))


def pmf_to_density(pmf: DiscretePmf) -> PiecewiseConstantDensity:
    """Spread bin ``i`` of an n-bin pmf uniformly over ``[i/n, (i+1)/n)``.

    Sampling the result and reading off ``floor(n * x)`` recovers the pmf;
    the fractional part is the uniform within-bin jitter used to break ties.
    """
    n = pmf.n
    b = np.arange(n + 1, dtype=float) / n
    return make_pwc(b, pmf.masses * n)


def as_density(d) -> PiecewiseConstantDensity:
    if isinstance(d, PiecewiseConstantDensity):
        return d
    if isinstance(d, DiscretePmf):
        return pmf_to_density(d)
    raise TypeError(f"expected a density or pmf, got {type(d).__name__}")


def cdf(d: PiecewiseConstantDensity, x):
    """Exact CDF; piecewise linear between breakpoints."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    c = d.cumulative()
    idx = np.clip(np.searchsorted(d.breakpoints, x, side="right") - 1, 0, d.n_pieces - 1)
    out = c[idx] + d.heights[idx] * (x - d.breakpoints[idx])
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def inverse_cdf(d: PiecewiseConstantDensity, u):
    """Map uniforms in [0, 1) to the domain; zero-height pieces are never hit."""
    u = np.asarray(u, dtype=float)
    c = d.cumulative()
    positive = np.flatnonzero(d.heights > 0)
    # side="right" jumps past zero-mass pieces whose cumulative value equals u
    idx = np.searchsorted(c, u, side="right") - 1
    idx = np.clip(idx, positive[0], positive[-1])
    # float rounding can still land on an empty piece; snap to the nearest positive one at or before
    empty = d.heights[idx] <= 0
    if np.any(empty):
        pos = np.searchsorted(positive, idx[empty], side="right") - 1
        idx[empty] = positive[np.maximum(pos, 0)]
    x = d.breakpoints[idx] + (u - c[idx]) / d.heights[idx]
    x = np.clip(x, d.breakpoints[idx], d.breakpoints[idx + 1])
    return float(x) if x.ndim == 0 else x


def sample(d: PiecewiseConstantDensity, rng: np.random.Generator) -> float:
    return inverse_cdf(d, rng.random())


def sample_many(d: PiecewiseConstantDensity, size: int, rng: np.random.Generator) -> np.ndarray:
    return np.atleast_1d(inverse_cdf(d, rng.random(size)))


def poisson_count(mean: float, rng: np.random.Generator) -> int:
    if mean < 0:
        raise ValueError(f"Poisson mean must be nonnegative, got {mean}")
    return int(rng.poisson(mean))


def merged_breakpoints(*densities: PiecewiseConstantDensity) -> np.ndarray:
    return np.unique(np.concatenate([d.breakpoints for d in densities]))


def piece_masses(
    p: PiecewiseConstantDensity, q: PiecewiseConstantDensity
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Masses of ``p`` and ``q`` on each piece of their common refinement."""
    grid = merged_breakpoints(p, q)
    mid = 0.5 * (grid[:-1] + grid[1:])
    w = np.diff(grid)
    return grid, p.density_at(mid) * w, q.density_at(mid) * w


def mixture_half(p: PiecewiseConstantDensity, q: PiecewiseConstantDensity) -> PiecewiseConstantDensity:
    grid = merged_breakpoints(p, q)
    mid = 0.5 * (grid[:-1] + grid[1:])
    return make_pwc(grid, 0.5 * (p.density_at(mid) + q.density_at(mid)))


def relabel(d: PiecewiseConstantDensity, new_breakpoints: Sequence[float]) -> PiecewiseConstantDensity:
    """Push ``d`` forward through the increasing piecewise-linear map sending
    each breakpoint to the corresponding entry of ``new_breakpoints``."""
    return from_masses(new_breakpoints, d.masses)


def flatten_pair(
    p: PiecewiseConstantDensity, q: PiecewiseConstantDensity
) -> tuple[PiecewiseConstantDensity, PiecewiseConstantDensity]:
    """Push ``p`` and ``q`` through the CDF of their mixture.

    On a merged piece where the mixture has height ``h = (hp + hq) / 2`` the
    image has width ``h * w`` and carries masses ``hp * w`` and ``hq * w``, so
    the output heights are ``hp / h`` and ``hq / h``: they sum to 2 exactly.
    Pieces where the mixture vanishes have zero width in the image and are
    dropped. The map is monotone, so sample order and A_k distance are kept.
    """
    grid = merged_breakpoints(p, q)
    mid = 0.5 * (grid[:-1] + grid[1:])
    hp, hq = p.density_at(mid), q.density_at(mid)
    hm = 0.5 * (hp + hq)
    keep = hm > 0
    if not np.any(keep):
        raise DegenerateSupport("mixture has no mass")
    w = np.diff(grid)[keep]
    hp, hq, hm = hp[keep], hq[keep], hm[keep]
    image_w = hm * w
    cuts = np.empty(image_w.size + 1)
    cuts[0] = 0.0
    cuts[1:] = np.cumsum(image_w) / math.fsum(image_w)
    cuts[-1] = 1.0
    # heights are assigned from masses so that sub-ulp width errors don't break normalization
    mp, mq = hp * w, hq * w
    new_w = np.diff(cuts)
    if not np.all(new_w > 0):
        raise DegenerateSupport("mixture CDF collapses a piece to zero width")
    fp = mp / new_w
    fq = mq / new_w
    # renormalize the pair so fp + fq == 2 holds on every piece to rounding
    scale = 2.0 / (fp + fq)
    return make_pwc(cuts, fp * scale), make_pwc(cuts, fq * scale)


def _first_bad(values, predicate) -> int | None:
    for i, v in enumerate(values):
        if not predicate(v):
            return i
    return None


def from_json(obj: dict):
    """Parse ``{"breakpoints", "heights"}`` or ``{"masses"}``.

    Densities whose breakpoints span some ``[a, b]`` other than [0, 1] are
    affinely rescaled. The first violated invariant is reported with its index.
    """
    if "masses" in obj:
        return DiscretePmf(np.asarray(obj["masses"], dtype=float))
    if "breakpoints" not in obj or "heights" not in obj:
        raise DistributionError("expected keys 'breakpoints' and 'heights', or 'masses'")
    b = [float(x) for x in obj["breakpoints"]]
    h = [float(x) for x in obj["heights"]]
    if len(b) < 2 or len(h) != len(b) - 1:
        raise DistributionError(f"need len(heights) == len(breakpoints) - 1, got {len(h)} and {len(b)}")
    bad = _first_bad(range(1, len(b)), lambda i: b[i] > b[i - 1])
    if bad is not None:
        raise NonAscendingBreakpoints(bad + 1)
    if b[0] != 0.0 or b[-1] != 1.0:
        return rescale_to_unit(b, h)
    return make_pwc(b, h)


def load(path: str | Path):
    with open(path) as fh:
        return from_json(json.load(fh))


def dump(d, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(d.to_json(), fh)
        fh.write("\n")
