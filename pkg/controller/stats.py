import math
from typing import Sequence, Tuple

import numpy as np
from scipy import stats

from errors import DegenerateSampleError
from model.experiment import CostComparison, TTestResult, ledger_counts
from model.ledger import CostLedger


def t_test_one_tailed(samples: Sequence[float]) -> TTestResult:
    """One-sample t-test of H0: mean = 0 against H1: mean > 0."""
    values = np.asarray(samples, dtype=np.float64)
    n = values.shape[0]
    if n < 2:
        raise DegenerateSampleError(f"t-test needs at least 2 samples, got {n}", n=n)
    stddev = float(values.std(ddof=1))
    if stddev == 0.0:
        raise DegenerateSampleError("samples have zero variance", n=n, mean=float(values.mean()))
    mean = float(values.mean())
    t = mean * math.sqrt(n) / stddev
    return TTestResult(n=n, mean=mean, stddev=stddev, t=t, p_one_tailed=float(stats.t.sf(t, df=n - 1)))


def fd_histogram(values: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """Counts and bin edges under the Freedman-Diaconis rule."""
    values = np.asarray(values, dtype=np.float64)
    edges = np.histogram_bin_edges(values, bins="fd")
    counts, edges = np.histogram(values, bins=edges)
    return counts, edges


def compare_costs(
        honest_ledger: CostLedger,
        spoof_ledger: CostLedger,
        honest_units: int = 1,
        spoof_units: int = 1,
        unit: str = "step",
) -> CostComparison:
    """Spoof against honest FP cost, totalled and spread per step or checkpoint update."""
    if honest_ledger.fp_units <= 0:
        raise DegenerateSampleError("honest cost is zero; no ratio to report")
    if honest_units < 1 or spoof_units < 1:
        raise DegenerateSampleError(f"cost units must be positive, got {honest_units} and {spoof_units}")
    return CostComparison(
        honest_fp=honest_ledger.fp_units,
        spoof_fp=spoof_ledger.fp_units,
        honest_units=honest_units,
        spoof_units=spoof_units,
        unit=unit,
        honest_breakdown=ledger_counts(honest_ledger),
        spoof_breakdown=ledger_counts(spoof_ledger),
    )
