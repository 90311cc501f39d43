"""Exact and Monte Carlo tools for nonstationary random walks on compact abelian groups."""

__version__ = "0.1.0"

from .groups import DyadicCantor, FiniteAbelian, PAdicInt, Torus, group_from_config  # noqa: E402
from .measures import (  # noqa: E402
    AtomicMeasure,
    MeasureFamily,
    convolve,
    convolve_power,
    convolve_sequence,
    dirac,
    from_pairs,
    uniform,
)
from .wasserstein import w1, w1_exact, w1_to_haar  # noqa: E402
from .aperiodicity import is_strictly_aperiodic  # noqa: E402
from .partition import contraction_certificate, vitali_partition  # noqa: E402
from .walk import Observable, WalkSchedule, simulate_birkhoff  # noqa: E402
