"""Rarity harness for the all-negative-output property of random networks.

For a random network C mapping R^n to R^n with hidden dimension n and
depth of order log2(n), the property P(C) says that no input of a
sign-vector dataset maps to an all-negative output.  If the n output
coordinates were exactly independent symmetric variables, each input
would be all-negative with probability 2^-n, so a dataset of m rows
would see m * 2^-n violations per network on average.  This module
measures the empirical violation rate over many seeded network draws
and compares it against that independence prediction; a synthetic mode
replaces the network outputs with independent standard Gaussians to
calibrate the baseline exactly.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from multiprocessing import get_context

import numpy as np

from .activations import ActivationSpec, get_activation
from .errors import InconclusiveError
from .simulator import NetworkConfig, NetworkSample, make_config, resolve_workers, _forward_draw

# Exact zeros count as non-negative: "all negative" reads as strict
# inequality on every coordinate.
_TRIAL_STREAM = 0x51D


@dataclass(frozen=True)
class SignDataset:
    """Rows of +-1 entries; automatically normalized, no duplicate or
    antipodal pairs (scalar multiples are excluded)."""

    inputs: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        if inputs.ndim != 2 or inputs.shape[0] < 1:
            raise ValueError("inputs must be a non-empty 2D matrix")
        if not np.all(np.abs(inputs) == 1.0):
            raise ValueError("sign datasets must have entries in {-1, +1}")
        canonical = {tuple((row * row[0]).astype(np.int8).tolist()) for row in inputs}
        if len(canonical) != inputs.shape[0]:
            raise ValueError("sign dataset has duplicate or antipodal rows")
        inputs.flags.writeable = False
        object.__setattr__(self, "inputs", inputs)

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    @property
    def dimension(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True)
class PropertyResult:
    """Per-input all-negative flags for one network draw."""

    flags: np.ndarray
    violation_count: int
    property_holds: bool


@dataclass(frozen=True)
class RarityReport:
    """Observed violation rate against the independence prediction."""

    trials: int
    empirical_violation_rate: float
    independence_prediction: float
    ratio: float
    ci_low: float
    ci_high: float
    mode: str
    dimension: int
    dataset_size: int

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "empirical_violation_rate": self.empirical_violation_rate,
            "independence_prediction": self.independence_prediction,
            "ratio": self.ratio,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "mode": self.mode,
            "dimension": self.dimension,
            "dataset_size": self.dataset_size,
        }

    def summary(self) -> str:
        return (
            f"rate {self.empirical_violation_rate:.6g} vs prediction "
            f"{self.independence_prediction:.6g} (ratio {self.ratio:.3f}, "
            f"95% CI [{self.ci_low:.6g}, {self.ci_high:.6g}], {self.trials} trials)"
        )


def generate_sign_dataset(n: int, m: int, seed: int) -> SignDataset:
    """Sample m distinct, non-antipodal sign vectors, deterministic in seed.

    Needs m <= 2^(n-1): antipodal exclusion halves the available rows.
    """
    if n < 1 or m < 1:
        raise ValueError("n and m must be positive")
    if n <= 62 and m > 2 ** (n - 1):
        raise ValueError(
            f"cannot draw {m} non-antipodal rows from dimension {n}: "
            f"only 2^{n - 1} antipodal classes exist"
        )
    rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=(_TRIAL_STREAM, 0)))
    )
    rows: list[np.ndarray] = []
    seen: set[tuple[int, ...]] = set()
    while len(rows) < m:
        batch = rng.integers(0, 2, size=(max(2 * (m - len(rows)), 16), n)) * 2 - 1
        for row in batch:
            key = tuple((row * row[0]).tolist())
            if key in seen:
                continue
            seen.add(key)
            rows.append(row.astype(np.float64))
            if len(rows) == m:
                break
    return SignDataset(np.array(rows))


def check_property(sample: NetworkSample, dataset: SignDataset) -> PropertyResult:
    """Flag every input whose final-layer output is strictly all-negative.

    Exact zeros count as non-negative.  The property holds when no input
    is flagged.
    """
    from .simulator import forward

    outputs = forward(sample, dataset.inputs)[-1]
    flags = np.all(outputs < 0.0, axis=1)
    count = int(flags.sum())
    return PropertyResult(flags, count, count == 0)


def conjecture_config(
    n: int, seed: int, depth_constant: float = 1.0, activation: ActivationSpec | str = "tanh"
) -> NetworkConfig:
    """Square network R^n -> R^n with depth ceil(c * log2(n))."""
    if n < 2:
        raise ValueError(f"dimension must be >= 2, got {n}")
    if depth_constant <= 0:
        raise ValueError("depth constant must be positive")
    spec = get_activation(activation) if isinstance(activation, str) else activation
    depth = max(1, math.ceil(depth_constant * math.log2(n)))
    return make_config(n0=n, width=n, depth=depth, activation=spec, seed=seed)


def _network_violations(config: NetworkConfig, inputs: np.ndarray, start: int, stop: int) -> dict:
    counts = np.empty(stop - start, dtype=np.int64)
    for offset, trial in enumerate(range(start, stop)):
        outputs = _forward_draw(config, inputs, trial)[-1]
        counts[offset] = int(np.all(outputs < 0.0, axis=1).sum())
    return {"counts": counts}


def _synthetic_violations(config: NetworkConfig, inputs: np.ndarray, start: int, stop: int) -> dict:
    # Independent standard Gaussian outputs in place of the network.
    m = inputs.shape[0]
    counts = np.empty(stop - start, dtype=np.int64)
    for offset, trial in enumerate(range(start, stop)):
        gen = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(config.seed, spawn_key=(_TRIAL_STREAM, 1, trial)))
        )
        outputs = gen.standard_normal((m, config.width))
        counts[offset] = int(np.all(outputs < 0.0, axis=1).sum())
    return {"counts": counts}


def _rarity_report(counts: np.ndarray, m: int, n: int, mode: str) -> RarityReport:
    trials = counts.size
    prediction = m * 2.0 ** (-n)
    total = int(counts.sum())
    rate = total / trials
    if total == 0 and prediction * trials < 5.0:
        raise InconclusiveError(
            f"no violations in {trials} trials with prediction {prediction!r}: "
            "the run is underpowered, increase trials"
        )
    stderr = float(np.std(counts, ddof=1) / math.sqrt(trials)) if trials > 1 else math.inf
    half = 1.96 * stderr
    return RarityReport(
        trials=trials,
        empirical_violation_rate=rate,
        independence_prediction=prediction,
        ratio=rate / prediction,
        ci_low=rate - half,
        ci_high=rate + half,
        mode=mode,
        dimension=n,
        dataset_size=m,
    )


def _map_trials(fn, config: NetworkConfig, inputs: np.ndarray, trials: int, workers: int) -> np.ndarray:
    from .simulator import _chunk_bounds

    bounds = _chunk_bounds(trials, workers)
    if workers <= 1:
        parts = [fn(config, inputs, a, b) for a, b in bounds]
    else:
        ctx = get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            futures = [pool.submit(fn, config, inputs, a, b) for a, b in bounds]
            parts = [f.result() for f in futures]
    return np.concatenate([p["counts"] for p in parts])


def estimate_rarity(
    config: NetworkConfig,
    dataset: SignDataset,
    trials: int,
    workers: int | None = None,
    synthetic: bool = False,
) -> RarityReport:
    """Mean violations per network over seeded trials, with a confidence
    interval, against the exact independence prediction m * 2^-n.

    With ``synthetic`` the network outputs are replaced by independent
    standard Gaussians, for which the prediction is exact by
    construction.
    """
    if trials < 100:
        raise ValueError(f"need at least 100 trials, got {trials}")
    if dataset.dimension != config.n0:
        raise ValueError("dataset dimension does not match the network input width")
    fn = _synthetic_violations if synthetic else _network_violations
    counts = _map_trials(fn, config, dataset.inputs, trials, resolve_workers(workers))
    return _rarity_report(counts, dataset.size, config.width, "synthetic" if synthetic else "network")


def estimate_rarity_synthetic(
    n: int, m: int, trials: int, seed: int, workers: int | None = None
) -> RarityReport:
    """Independence baseline without a dataset: m independent rows of n
    independent Gaussians per trial, so the all-negative probability per
    row is exactly 2^-n."""
    if trials < 100:
        raise ValueError(f"need at least 100 trials, got {trials}")
    if n < 2 or m < 1:
        raise ValueError("need n >= 2 and m >= 1")
    config = conjecture_config(n, seed)
    inputs = np.zeros((m, n))  # placeholder, synthetic mode ignores inputs
    counts = _map_trials(_synthetic_violations, config, inputs, trials, resolve_workers(workers))
    return _rarity_report(counts, m, n, "synthetic")
