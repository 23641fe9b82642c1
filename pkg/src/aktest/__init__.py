"""Exact A_k distances, closeness testers under A_k, hard instances and a seeded experiment harness."""

from .dist import DiscretePmf, PiecewiseConstantDensity, rng_stream
from .metrics import ak_distance_bruteforce, ak_distance_discrete, ak_distance_pwc
from .testers import TesterConfig, Verdict, flat_ak_tester, general_ak_tester, simple_ak_tester

__all__ = [
    "DiscretePmf",
    "PiecewiseConstantDensity",
    "TesterConfig",
    "Verdict",
    "ak_distance_bruteforce",
    "ak_distance_discrete",
    "ak_distance_pwc",
    "flat_ak_tester",
    "general_ak_tester",
    "rng_stream",
    "simple_ak_tester",
]
