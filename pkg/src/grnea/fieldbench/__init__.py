"""Analytic stand-ins for expensive field simulations."""

from .fiber import FiberBenchmark
from .sampling import lhs_sample
from .strain import StrainBenchmark

BENCHMARKS = {"fiber": FiberBenchmark, "strain": StrainBenchmark}


def get_benchmark(name: str):
    try:
        return BENCHMARKS[name]()
    except KeyError:
        raise ValueError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}") from None


__all__ = ["BENCHMARKS", "FiberBenchmark", "StrainBenchmark", "get_benchmark", "lhs_sample"]
