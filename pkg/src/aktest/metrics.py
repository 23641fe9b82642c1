"""A_k, L1, L2 and scale-sensitive L2 distances, plus reduced distributions.

A_k values are computed in exact arithmetic. Every float mass is a dyadic
rational, so after scaling by a common power of two all prefix sums are
Python integers; the maximizing partition is found without rounding and the
final value is a single correctly-rounded division. The dynamic program and
the brute-force enumeration therefore agree bit for bit.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dist import DiscretePmf, PiecewiseConstantDensity, cdf, piece_masses

BRUTE_FORCE_MAX_N = 16


class SupportMismatch(ValueError):
    pass


class PartitionOutOfRange(ValueError):
    pass


class TooLarge(ValueError):
    pass


@dataclass(frozen=True)
class IntervalPartition:
    """Ascending cut points; ``len(cuts) - 1`` intervals ``[cuts[i], cuts[i+1]]``."""

    cuts: tuple

    def __post_init__(self):
        arr = np.asarray(self.cuts, dtype=float).ravel()
        if arr.size < 2:
            raise ValueError("a partition needs at least two cut points")
        bad = np.flatnonzero(~(arr[1:] > arr[:-1]))
        if bad.size:
            raise ValueError(f"cut points must be strictly ascending (index {bad[0] + 1})")
        object.__setattr__(self, "cuts", tuple(arr.tolist()))

    def __len__(self) -> int:
        return len(self.cuts) - 1

    @classmethod
    def uniform(cls, n_intervals: int, lo: float = 0.0, hi: float = 1.0) -> "IntervalPartition":
        c = np.linspace(lo, hi, n_intervals + 1)
        c[0], c[-1] = lo, hi
        return cls(tuple(c))


def _masses(d) -> np.ndarray:
    if isinstance(d, DiscretePmf):
        return d.masses
    if isinstance(d, PiecewiseConstantDensity):
        raise TypeError("expected a discrete pmf, got a density")
    return np.asarray(d, dtype=float)


def reduced_pmf(d, part: IntervalPartition) -> DiscretePmf:
    """Mass of ``d`` on each interval of ``part``.

    For a density the cuts live in [0, 1]; for an n-bin pmf they are bin
    boundaries in [0, n] (fractional cuts split a bin proportionally).
    """
    cuts = np.asarray(part.cuts)
    if isinstance(d, PiecewiseConstantDensity):
        lo, hi = 0.0, 1.0
        if cuts[0] != lo or cuts[-1] != hi:
            raise PartitionOutOfRange(f"partition spans [{cuts[0]}, {cuts[-1]}], domain is [0, 1]")
        c = np.asarray(cdf(d, cuts), dtype=float)
    else:
        m = _masses(d)
        n = m.size
        if cuts[0] != 0 or cuts[-1] != n:
            raise PartitionOutOfRange(f"partition spans [{cuts[0]}, {cuts[-1]}], domain is [0, {n}]")
        c = _pmf_cdf(m, cuts)
    c[0], c[-1] = 0.0, 1.0
    masses = np.maximum(np.diff(c), 0.0)
    return DiscretePmf(masses / math.fsum(masses))


def _pmf_cdf(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    cum = np.concatenate([[0.0], np.cumsum(m)])
    i = np.clip(np.floor(x).astype(int), 0, m.size - 1)
    return cum[i] + (x - i) * m[i]


# ---------------------------------------------------------------- exact A_k core


def _to_fixed(*arrays) -> tuple[list[list[int]], int]:
    """Scale float arrays to integers by a shared power of two."""
    ratios = [[float(v).as_integer_ratio() for v in a] for a in arrays]
    shift = max((d.bit_length() - 1 for r in ratios for _, d in r), default=0)
    return [[n << (shift - (d.bit_length() - 1)) for n, d in r] for r in ratios], shift


def _sign_runs(diff: Sequence[int]) -> tuple[list[int], list[int]]:
    """Collapse a difference vector into maximal runs of constant sign.

    Zero entries join whichever run surrounds them. Returns the run sums and,
    for each run, the index one past its last nonzero entry.
    """
    sums: list[int] = []
    ends: list[int] = []
    for i, v in enumerate(diff):
        if v == 0:
            continue
        if sums and (sums[-1] > 0) == (v > 0):
            sums[-1] += v
            ends[-1] = i + 1
        else:
            sums.append(v)
            ends.append(i + 1)
    return sums, ends


def _ak_runs(runs: list[int], k: int) -> tuple[int, list[int]]:
    """Best partition of the run sequence into at most ``k`` intervals.

    Returns the exact objective and the run indices after which to cut.

    f[t][j] is the best value for the first j runs in exactly t intervals;
    f[t][j] = max_{i<j} f[t-1][i] + |S_j - S_i|, and splitting |.| into its
    two signed branches lets both maxima be carried as running prefix maxima.
    """
    r = len(runs)
    if r == 0:
        return 0, []
    if k >= r:
        return sum(abs(v) for v in runs), list(range(1, r))
    S = [0]
    for v in runs:
        S.append(S[-1] + v)
    NEG = None
    prev = [0] + [NEG] * r  # t = 0
    back: list[list[int]] = []
    best_val, best_t = None, 0
    for t in range(1, k + 1):
        cur = [NEG] * (r + 1)
        arg = [0] * (r + 1)
        hi_plus = hi_minus = NEG  # max f(i) - S_i, max f(i) + S_i over i < j
        at_plus = at_minus = 0
        for j in range(1, r + 1):
            i = j - 1
            if prev[i] is not NEG:
                a, b = prev[i] - S[i], prev[i] + S[i]
                if hi_plus is NEG or a > hi_plus:
                    hi_plus, at_plus = a, i
                if hi_minus is NEG or b > hi_minus:
                    hi_minus, at_minus = b, i
            if hi_plus is NEG:
                continue
            v1, v2 = hi_plus + S[j], hi_minus - S[j]
            if v1 >= v2:
                cur[j], arg[j] = v1, at_plus
            else:
                cur[j], arg[j] = v2, at_minus
        back.append(arg)
        if cur[r] is not NEG and (best_val is None or cur[r] > best_val):
            best_val, best_t = cur[r], t
        prev = cur
    cuts = []
    j = r
    for t in range(best_t, 0, -1):
        j = back[t - 1][j]
        if j > 0:
            cuts.append(j)
    return best_val, sorted(cuts)


def _ak_exact(p_masses, q_masses, k: int) -> tuple[float, list[int]]:
    if k < 1:
        raise ValueError("k must be at least 1")
    (P, Q), shift = _to_fixed(p_masses, q_masses)
    diff = [a - b for a, b in zip(P, Q)]
    runs, ends = _sign_runs(diff)
    val, run_cuts = _ak_runs(runs, k)
    return val / (1 << shift), [ends[c - 1] for c in run_cuts]


def _check_same_support(p, q) -> tuple[np.ndarray, np.ndarray]:
    pm, qm = _masses(p), _masses(q)
    if pm.shape != qm.shape:
        raise SupportMismatch(f"supports differ: {pm.size} vs {qm.size}")
    return pm, qm


def ak_distance_discrete(p, q, k: int, return_cuts: bool = False):
    """Exact A_k distance between two pmfs on [n].

    With ``return_cuts`` the bin boundaries of an optimal partition (values in
    1..n-1) are returned as well.
    """
    pm, qm = _check_same_support(p, q)
    val, cuts = _ak_exact(pm, qm, k)
    return (val, cuts) if return_cuts else val


def ak_distance_bruteforce(p, q, k: int) -> float:
    """Enumerate every placement of at most ``k - 1`` cuts. Independent of the DP."""
    pm, qm = _check_same_support(p, q)
    n = pm.size
    if n > BRUTE_FORCE_MAX_N:
        raise TooLarge(f"brute force is limited to n <= {BRUTE_FORCE_MAX_N}, got {n}")
    if k < 1:
        raise ValueError("k must be at least 1")
    (P, Q), shift = _to_fixed(pm, qm)
    S = [0] + list(itertools.accumulate(a - b for a, b in zip(P, Q)))
    best = 0
    for c in range(min(k, n)):
        for inner in itertools.combinations(range(1, n), c):
            bounds = (0,) + inner + (n,)
            total = sum(abs(S[bounds[i + 1]] - S[bounds[i]]) for i in range(len(bounds) - 1))
            best = max(best, total)
    return best / (1 << shift)


def ak_distance_pwc(p: PiecewiseConstantDensity, q: PiecewiseConstantDensity, k: int, return_cuts: bool = False):
    """Exact A_k distance between two piecewise-constant densities.

    Works on the merged breakpoint grid collapsed to sign runs of ``p - q``.
    No optimal partition needs a cut strictly inside a run: on a run the
    prefix difference S moves monotonically, and for a cut c between
    neighbouring cuts a < c < b the contribution |S(c)-S(a)| + |S(b)-S(c)| is
    convex in S(c), so it is maximized with c at one end of the run. Cuts can
    therefore be pushed to run boundaries without loss.
    """
    grid, pm, qm = piece_masses(p, q)
    val, cuts = _ak_exact(pm, qm, k)
    if return_cuts:
        return val, [float(grid[c]) for c in cuts]
    return val


def sign_run_reduce(p: PiecewiseConstantDensity, q: PiecewiseConstantDensity) -> tuple[DiscretePmf, DiscretePmf]:
    """Reduced pmfs over the maximal sign runs of ``p - q``.

    Zero-difference pieces are folded into the run before them (or the first
    run if they lead).
    """
    grid, pm, qm = piece_masses(p, q)
    d = pm - qm
    labels = np.zeros(d.size, dtype=int)
    run, sign = -1, 0
    for i, v in enumerate(d):
        s = int(np.sign(v))
        if s != 0 and s != sign:
            run += 1
            sign = s
        labels[i] = max(run, 0)
    nruns = max(run, 0) + 1
    rp = np.bincount(labels, weights=pm, minlength=nruns)
    rq = np.bincount(labels, weights=qm, minlength=nruns)
    return DiscretePmf(rp / math.fsum(rp)), DiscretePmf(rq / math.fsum(rq))


def count_sign_runs(p, q) -> int:
    if isinstance(p, PiecewiseConstantDensity):
        _, pm, qm = piece_masses(p, q)
    else:
        pm, qm = _check_same_support(p, q)
    (P, Q), _ = _to_fixed(pm, qm)
    return len(_sign_runs([a - b for a, b in zip(P, Q)])[0])


def l1_distance(p, q) -> float:
    if isinstance(p, PiecewiseConstantDensity) and isinstance(q, PiecewiseConstantDensity):
        _, pm, qm = piece_masses(p, q)
        return math.fsum(np.abs(pm - qm))
    pm, qm = _check_same_support(p, q)
    return math.fsum(np.abs(pm - qm))


def l2_distance(p, q) -> float:
    """Euclidean distance; for densities the L2 norm of ``p - q`` on [0, 1]."""
    if isinstance(p, PiecewiseConstantDensity) and isinstance(q, PiecewiseConstantDensity):
        grid = np.unique(np.concatenate([p.breakpoints, q.breakpoints]))
        mid = 0.5 * (grid[:-1] + grid[1:])
        dh = p.density_at(mid) - q.density_at(mid)
        return math.sqrt(math.fsum(dh * dh * np.diff(grid)))
    pm, qm = _check_same_support(p, q)
    return math.sqrt(math.fsum((pm - qm) ** 2))


def scale_sensitive_l2(p, q, k: int) -> float:
    """Max over partitions into intervals of width <= 1/k of sum Discr^2 / width^(1/8).

    Returns the squared quantity (the maximized sum). Brute force over all
    admissible compositions of [n]; width is (bins in interval) / n.
    """
    pm, qm = _check_same_support(p, q)
    n = pm.size
    if n > BRUTE_FORCE_MAX_N:
        raise TooLarge(f"scale_sensitive_l2 is limited to n <= {BRUTE_FORCE_MAX_N}, got {n}")
    max_len = n // k
    if max_len < 1:
        raise ValueError(f"no interval of [n={n}] has width <= 1/{k}")
    S = np.concatenate([[0.0], np.cumsum(pm - qm)])

    def term(a: int, b: int) -> float:
        return (S[b] - S[a]) ** 2 / ((b - a) / n) ** 0.125

    best = 0.0

    def walk(start: int, acc: float):
        nonlocal best
        if start == n:
            best = max(best, acc)
            return
        for end in range(start + 1, min(n, start + max_len) + 1):
            walk(end, acc + term(start, end))

    walk(0, 0.0)
    return best


def dyadic_levels(n: int, k: int) -> list[int]:
    """Interval counts ``k * 2**j`` of the nested dyadic partitions of [n], down to singletons."""
    levels = []
    ell = k
    while ell <= n:
        if n % ell:
            raise ValueError(f"n={n} is not k * 2**j for k={k}")
        levels.append(ell)
        ell *= 2
    if not levels or levels[-1] != n:
        raise ValueError(f"n={n} is not k * 2**j for k={k}")
    return levels


def dyadic_scale_sum(p, q, k: int) -> float:
    """Sum over dyadic levels and their intervals of Discr^2 / width^(1/8)."""
    pm, qm = _check_same_support(p, q)
    n = pm.size
    d = pm - qm
    total = 0.0
    for ell in dyadic_levels(n, k):
        block = n // ell
        discr = d.reshape(ell, block).sum(axis=1)
        total += float(np.sum(discr**2)) / (block / n) ** 0.125
    return total
