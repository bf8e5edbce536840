"""Seeded Monte Carlo simulation of finite-width random networks.

Networks follow the recurrence z(1) = b(1) + W(1) x and
z(l) = b(l) + W(l) sigma(z(l-1)) with Gaussian weights of variance
C_W / fan_in and Gaussian biases of variance C_b; there is no output
layer, the preactivations at the final layer are the outputs.  Under
critical tuning the theory predicts per-neuron covariances that follow
the scalar covariance map of :mod:`covflow.flow`, exact cross-neuron
independence in expectation, and connected four-point correlators that
shrink like 1/width.

Randomness contract: every weight block is drawn from its own
counter-based Philox stream keyed by (seed, width, draw, layer, kind),
so the draws are independent of generation order and of how draws are
distributed over workers.  Per-draw statistics are assembled by draw
index and reduced with compensated (Neumaier) summation over a fixed
tree, which makes every report bit-identical across worker counts.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from multiprocessing import get_context
from typing import Callable

import numpy as np

from .activations import ActivationSpec, get_activation, spec_from_dict, spec_to_dict
from .errors import InconclusiveError
from .flow import CriticalHyperparams, critical_hyperparams, initial_covariance
from .quadrature import QuadratureRule

_SEED_LIMIT = 2**64

_STREAM_WEIGHTS = 0
_STREAM_BIASES = 1


@dataclass(frozen=True)
class NetworkConfig:
    """Width profile, depth, activation, critical tuning, and seed."""

    n0: int
    width: int
    depth: int
    activation: ActivationSpec
    hyperparams: CriticalHyperparams
    seed: int

    def __post_init__(self):
        if self.n0 < 1:
            raise ValueError(f"n0 must be >= 1, got {self.n0}")
        if self.width < 2:
            raise ValueError(f"width must be >= 2, got {self.width}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if not 0 <= self.seed < _SEED_LIMIT:
            raise ValueError("seed must be a 64-bit unsigned integer")
        hp = self.hyperparams
        critical = critical_hyperparams(self.activation)
        if hp.c_b != 0.0 or hp.c_w_first != 1.0 or abs(hp.c_w - critical.c_w) > 1e-10 * critical.c_w:
            raise ValueError(
                "hyperparams are not the critical tuning for this activation: "
                f"expected {critical}, got {hp}"
            )


def make_config(
    n0: int, width: int, depth: int, activation: ActivationSpec, seed: int
) -> NetworkConfig:
    """Build a NetworkConfig with the critical tuning for the activation."""
    return NetworkConfig(n0, width, depth, activation, critical_hyperparams(activation), seed)


@dataclass(frozen=True)
class Dataset:
    """Row-normalized inputs; no pair may be a scalar multiple of another."""

    inputs: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        if inputs.ndim != 2 or inputs.shape[0] < 1:
            raise ValueError("inputs must be a non-empty 2D matrix")
        norms = np.mean(inputs * inputs, axis=1)
        bad = np.nonzero(np.abs(norms - 1.0) > 1e-8)[0]
        if bad.size:
            raise ValueError(
                f"dataset row {int(bad[0])} is not normalized: mean square {norms[bad[0]]!r}"
            )
        gram = (inputs @ inputs.T) / inputs.shape[1]
        off = gram[~np.eye(inputs.shape[0], dtype=bool)]
        if off.size and np.max(np.abs(off)) >= 1.0 - 1e-9:
            raise ValueError(
                "dataset contains scalar multiples: a pairwise covariance "
                f"reaches {np.max(np.abs(off))!r}"
            )
        inputs.flags.writeable = False
        object.__setattr__(self, "inputs", inputs)

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


def dataset_from_gram(gram: np.ndarray, n0: int) -> Dataset:
    """Construct normalized inputs whose pairwise covariances match ``gram``.

    The Gram matrix must be symmetric positive definite with unit
    diagonal and needs n0 >= m rows of embedding space.  Rows are built
    from the Cholesky factor against an orthonormal frame, so the match
    is exact up to rounding.
    """
    gram = np.asarray(gram, dtype=np.float64)
    if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
        raise ValueError("gram must be a square matrix")
    m = gram.shape[0]
    if n0 < m:
        raise ValueError(f"n0 = {n0} is too small to realize {m} inputs")
    if np.max(np.abs(gram - gram.T)) > 1e-12 or np.max(np.abs(np.diag(gram) - 1.0)) > 1e-12:
        raise ValueError("gram must be symmetric with unit diagonal")
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise ValueError("gram is not positive definite") from exc
    inputs = np.zeros((m, n0))
    inputs[:, :m] = chol * math.sqrt(n0)
    return Dataset(inputs)


@dataclass(frozen=True)
class NetworkSample:
    """One concrete draw of all weights and biases."""

    config: NetworkConfig
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]


def _layer_generator(config: NetworkConfig, draw: int, layer: int, stream: int) -> np.random.Generator:
    key = (config.width, draw, layer, stream)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(config.seed, spawn_key=key)))


def _layer_weights(config: NetworkConfig, draw: int, layer: int) -> np.ndarray:
    fan_in = config.n0 if layer == 1 else config.width
    c_w = config.hyperparams.c_w_first if layer == 1 else config.hyperparams.c_w
    gen = _layer_generator(config, draw, layer, _STREAM_WEIGHTS)
    return gen.standard_normal((config.width, fan_in)) * math.sqrt(c_w / fan_in)


def _layer_biases(config: NetworkConfig, draw: int, layer: int) -> np.ndarray:
    if config.hyperparams.c_b == 0.0:
        return np.zeros(config.width)
    gen = _layer_generator(config, draw, layer, _STREAM_BIASES)
    return gen.standard_normal(config.width) * math.sqrt(config.hyperparams.c_b)


def sample_network(config: NetworkConfig, draw: int = 0) -> NetworkSample:
    """Draw all weights and biases; a deterministic function of the seed."""
    layers = range(1, config.depth + 1)
    return NetworkSample(
        config=config,
        weights=tuple(_layer_weights(config, draw, layer) for layer in layers),
        biases=tuple(_layer_biases(config, draw, layer) for layer in layers),
    )


def _as_inputs(dataset: "Dataset | np.ndarray", n0: int) -> np.ndarray:
    inputs = dataset.inputs if isinstance(dataset, Dataset) else np.asarray(dataset, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != n0:
        raise ValueError(f"inputs must be (m, {n0}), got {inputs.shape}")
    return inputs


def forward(sample: NetworkSample, dataset: "Dataset | np.ndarray") -> np.ndarray:
    """Exact evaluation of the recurrence; returns (depth, m, width) preactivations."""
    config = sample.config
    inputs = _as_inputs(dataset, config.n0)
    out = np.empty((config.depth, inputs.shape[0], config.width))
    signal = inputs
    for index, (w, b) in enumerate(zip(sample.weights, sample.biases)):
        z = signal @ w.T + b
        if not np.all(np.isfinite(z)):
            raise FloatingPointError(f"non-finite preactivation at layer {index + 1}")
        out[index] = z
        signal = config.activation(z)
    return out


def _forward_draw(config: NetworkConfig, inputs: np.ndarray, draw: int) -> np.ndarray:
    """Fused sample-and-forward; bit-identical to forward(sample_network(...))."""
    out = np.empty((config.depth, inputs.shape[0], config.width))
    signal = inputs
    for layer in range(1, config.depth + 1):
        w = _layer_weights(config, draw, layer)
        z = signal @ w.T + _layer_biases(config, draw, layer)
        if not np.all(np.isfinite(z)):
            raise FloatingPointError(f"non-finite preactivation at layer {layer}")
        out[layer - 1] = z
        signal = config.activation(z)
    return out


def neumaier_sum(values: np.ndarray, axis: int = 0) -> np.ndarray:
    """Compensated summation along an axis with a fixed sequential tree.

    The reduction order depends only on the array, never on worker
    count, so parallel and serial runs agree bitwise.
    """
    arr = np.moveaxis(np.asarray(values, dtype=np.float64), axis, 0)
    total = np.zeros(arr.shape[1:])
    comp = np.zeros_like(total)
    for row in arr:
        partial = total + row
        swap = np.abs(total) >= np.abs(row)
        comp += np.where(swap, (total - partial) + row, (row - partial) + total)
        total = partial
    return total + comp


def _mean_and_stderr(per_draw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    draws = per_draw.shape[0]
    mean = neumaier_sum(per_draw) / draws
    if draws < 2:
        return mean, np.full_like(mean, np.inf)
    var = neumaier_sum((per_draw - mean) ** 2) / (draws - 1)
    return mean, np.sqrt(var / draws)


# ---------------------------------------------------------------------------
# chunked execution over weight draws
# ---------------------------------------------------------------------------


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get("COVFLOW_WORKERS", "1"))
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    return workers


def _chunk_bounds(samples: int, workers: int) -> list[tuple[int, int]]:
    chunk = max(1, math.ceil(samples / (workers * 8)))
    return [(start, min(start + chunk, samples)) for start in range(0, samples, chunk)]


def _map_draw_chunks(
    fn: Callable[[NetworkConfig, np.ndarray, int, int], dict],
    config: NetworkConfig,
    inputs: np.ndarray,
    samples: int,
    workers: int,
) -> dict[str, np.ndarray]:
    """Run a per-draw statistics kernel over all draws; assemble by index."""
    bounds = _chunk_bounds(samples, workers)
    if workers <= 1:
        parts = [fn(config, inputs, a, b) for a, b in bounds]
    else:
        ctx = get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            futures = [pool.submit(fn, config, inputs, a, b) for a, b in bounds]
            parts = [f.result() for f in futures]
    return {key: np.concatenate([p[key] for p in parts], axis=0) for key in parts[0]}


# ---------------------------------------------------------------------------
# covariance estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmpiricalCovariance:
    """Monte Carlo covariance estimates per layer with standard errors.

    ``same_neuron`` holds estimates of E[z_i(a) z_i(b)] averaged over the
    neuron index and weight draws; ``cross_neuron`` the i1 != i2
    analogue, which the theory predicts to vanish identically.  Standard
    errors treat weight draws as the effective sample (neurons within a
    draw are correlated).
    """

    same_neuron: np.ndarray
    same_stderr: np.ndarray
    cross_neuron: np.ndarray
    cross_stderr: np.ndarray
    sample_count: int

    def to_dict(self) -> dict:
        return {
            "same_neuron": self.same_neuron.tolist(),
            "same_stderr": self.same_stderr.tolist(),
            "cross_neuron": self.cross_neuron.tolist(),
            "cross_stderr": self.cross_stderr.tolist(),
            "sample_count": self.sample_count,
        }


def _covariance_chunk(config: NetworkConfig, inputs: np.ndarray, start: int, stop: int) -> dict:
    m = inputs.shape[0]
    width = config.width
    same = np.empty((stop - start, config.depth, m, m))
    cross = np.empty_like(same)
    ksums = np.empty((stop - start, m, 4))
    kdraw = np.empty((stop - start, m))
    pair_count = width * (width - 1)
    for offset, draw in enumerate(range(start, stop)):
        z = _forward_draw(config, inputs, draw)
        for layer in range(config.depth):
            zl = z[layer]
            products = zl @ zl.T
            sums = zl.sum(axis=1)
            same[offset, layer] = products / width
            cross[offset, layer] = (np.outer(sums, sums) - products) / pair_count
        final = z[-1]
        for p in range(4):
            ksums[offset, :, p] = (final ** (p + 1)).sum(axis=1)
        kdraw[offset] = _excess_kurtosis_from_sums(ksums[offset], width)
    return {"same": same, "cross": cross, "ksums": ksums, "kdraw": kdraw}


def _covariance_stats(
    config: NetworkConfig, dataset: Dataset, samples: int, workers: int | None
) -> dict[str, np.ndarray]:
    if samples < 100:
        raise ValueError(f"need at least 100 weight draws, got {samples}")
    inputs = _as_inputs(dataset, config.n0)
    return _map_draw_chunks(_covariance_chunk, config, inputs, samples, resolve_workers(workers))


def _covariance_from_stats(stats: dict[str, np.ndarray], samples: int) -> EmpiricalCovariance:
    same_mean, same_stderr = _mean_and_stderr(stats["same"])
    cross_mean, cross_stderr = _mean_and_stderr(stats["cross"])
    return EmpiricalCovariance(same_mean, same_stderr, cross_mean, cross_stderr, samples)


def estimate_covariance(
    config: NetworkConfig,
    dataset: Dataset,
    samples: int,
    workers: int | None = None,
) -> EmpiricalCovariance:
    """Estimate per-layer covariances over ``samples`` weight draws."""
    return _covariance_from_stats(_covariance_stats(config, dataset, samples, workers), samples)


def covariance_with_diagnostics(
    config: NetworkConfig,
    dataset: Dataset,
    samples: int,
    workers: int | None = None,
) -> tuple[EmpiricalCovariance, "KurtosisReport"]:
    """Covariance estimates plus final-layer kurtosis in a single pass."""
    stats = _covariance_stats(config, dataset, samples, workers)
    empirical = _covariance_from_stats(stats, samples)
    pooled = samples * config.width
    totals = neumaier_sum(stats["ksums"])
    kurtosis = _excess_kurtosis_from_sums(totals, float(pooled))
    _, stderr = _mean_and_stderr(stats["kdraw"])
    return empirical, KurtosisReport(kurtosis, stderr, pooled, samples)


def theory_covariance(
    config: NetworkConfig, dataset: Dataset, rule: QuadratureRule | None = None
) -> np.ndarray:
    """Layer covariance matrices predicted by iterating the covariance map.

    Diagonals are exactly 1 under critical tuning; each off-diagonal
    entry evolves independently through the map.
    """
    from .flow import _quadrature_map

    inputs = _as_inputs(dataset, config.n0)
    m = inputs.shape[0]
    cmap = _quadrature_map(config.activation, rule)
    theory = np.empty((config.depth, m, m))
    current = np.eye(m)
    for i in range(m):
        for j in range(i + 1, m):
            current[i, j] = current[j, i] = initial_covariance(inputs[i], inputs[j])
    theory[0] = current
    for layer in range(1, config.depth):
        nxt = np.eye(m)
        for i in range(m):
            for j in range(i + 1, m):
                nxt[i, j] = nxt[j, i] = cmap(theory[layer - 1][i, j])
        theory[layer] = nxt
    return theory


def covariance_zscores(empirical: EmpiricalCovariance, theory: np.ndarray) -> dict[str, np.ndarray]:
    """Per-entry z-scores of the empirical estimates against the theory."""

    def z(diff: np.ndarray, stderr: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            scores = np.where(stderr > 0, diff / np.where(stderr > 0, stderr, 1.0), np.where(diff == 0, 0.0, np.inf))
        return scores

    return {
        "same": z(empirical.same_neuron - theory, empirical.same_stderr),
        "cross": z(empirical.cross_neuron, empirical.cross_stderr),
    }


# ---------------------------------------------------------------------------
# connected four-point correlator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FourPointReport:
    """Connected correlator E[z_i^2 z_j^2] - E[z_i^2] E[z_j^2] over neuron
    pairs at the final layer, for a single input, with its width."""

    width: int
    connected_correlator: float
    stderr: float
    sample_count: int

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "connected_correlator": self.connected_correlator,
            "stderr": self.stderr,
            "sample_count": self.sample_count,
        }


def connected_four_point(values: np.ndarray) -> tuple[float, float]:
    """Connected 4-point statistic of (draws, n) final-layer values.

    Returns the pair-averaged connected correlator and a standard error
    from fixed-size draw batches.  Vanishes for exactly Gaussian,
    cross-neuron independent values.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 8 or values.shape[1] < 2:
        raise ValueError("need a (draws >= 8, n >= 2) value matrix")
    draws, n = values.shape

    def estimate(block: np.ndarray) -> float:
        d = block.shape[0]
        u = block * block
        row_sum = u.sum(axis=1)
        row_sq = (u * u).sum(axis=1)
        pair_mean = (row_sum * row_sum - row_sq) / (n * (n - 1))
        mean_pairs = float(neumaier_sum(pair_mean) / d)
        u_bar = neumaier_sum(u) / d
        total = float(u_bar.sum())
        indep = (total * total - float((u_bar * u_bar).sum())) / (n * (n - 1))
        return (mean_pairs - indep) * d / (d - 1)

    batches = 40 if draws >= 800 else max(2, draws // 20)
    edges = np.linspace(0, draws, batches + 1, dtype=int)
    batch_values = np.array([estimate(values[a:b]) for a, b in zip(edges[:-1], edges[1:])])
    stderr = float(np.std(batch_values, ddof=1) / math.sqrt(batches))
    return estimate(values), stderr


def _four_point_chunk(config: NetworkConfig, inputs: np.ndarray, start: int, stop: int) -> dict:
    final = np.empty((stop - start, config.width))
    for offset, draw in enumerate(range(start, stop)):
        final[offset] = _forward_draw(config, inputs, draw)[-1, 0]
    return {"final": final}


def four_point_scaling(
    config_small: NetworkConfig,
    config_large: NetworkConfig,
    dataset: Dataset,
    samples: int,
    workers: int | None = None,
) -> tuple[FourPointReport, FourPointReport]:
    """Connected 4-point at two widths; the large width must be double.

    The two runs use streams keyed by their widths, so equal seeds give
    independent draws.
    """
    if config_large.width != 2 * config_small.width:
        raise ValueError("the second config must have exactly twice the width")
    if (config_small.n0, config_small.depth, config_small.seed, config_small.activation) != (
        config_large.n0,
        config_large.depth,
        config_large.seed,
        config_large.activation,
    ):
        raise ValueError("configs must be identical except for the width")
    inputs = _as_inputs(dataset, config_small.n0)
    if inputs.shape[0] != 1:
        raise ValueError("the four-point correlator is measured for a single input")
    workers = resolve_workers(workers)
    reports = []
    for config in (config_small, config_large):
        stats = _map_draw_chunks(_four_point_chunk, config, inputs, samples, workers)
        estimate, stderr = connected_four_point(stats["final"])
        reports.append(FourPointReport(config.width, estimate, stderr, samples))
    return reports[0], reports[1]


def four_point_halving_consistent(
    small: FourPointReport, large: FourPointReport, n_sigma: float = 3.0
) -> bool:
    """True when the large-width correlator is consistent with half the
    small-width one, comparing n_sigma error bands.

    Raises InconclusiveError when both bands overlap zero; the signal is
    then too weak to test the scaling and more draws are needed.
    """
    if (
        abs(small.connected_correlator) <= n_sigma * small.stderr
        and abs(large.connected_correlator) <= n_sigma * large.stderr
    ):
        raise InconclusiveError(
            "connected 4-point estimates are consistent with zero at both "
            "widths; increase the number of draws"
        )
    lo1 = large.connected_correlator - n_sigma * large.stderr
    hi1 = large.connected_correlator + n_sigma * large.stderr
    lo2 = 0.5 * (small.connected_correlator - n_sigma * small.stderr)
    hi2 = 0.5 * (small.connected_correlator + n_sigma * small.stderr)
    return max(lo1, lo2) <= min(hi1, hi2)


# ---------------------------------------------------------------------------
# normality diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KurtosisReport:
    """Per-input excess kurtosis of pooled final-layer preactivations."""

    excess_kurtosis: np.ndarray
    stderr: np.ndarray
    pooled_count: int
    sample_count: int

    def to_dict(self) -> dict:
        return {
            "excess_kurtosis": self.excess_kurtosis.tolist(),
            "stderr": self.stderr.tolist(),
            "pooled_count": self.pooled_count,
            "sample_count": self.sample_count,
        }


def _excess_kurtosis_from_sums(sums: np.ndarray, count: float) -> np.ndarray:
    s1, s2, s3, s4 = sums[..., 0], sums[..., 1], sums[..., 2], sums[..., 3]
    mean = s1 / count
    m2 = s2 / count - mean**2
    m4 = s4 / count - 4 * mean * s3 / count + 6 * mean**2 * s2 / count - 3 * mean**4
    return m4 / m2**2 - 3.0


def _kurtosis_chunk(config: NetworkConfig, inputs: np.ndarray, start: int, stop: int) -> dict:
    m = inputs.shape[0]
    sums = np.empty((stop - start, m, 4))
    per_draw = np.empty((stop - start, m))
    for offset, draw in enumerate(range(start, stop)):
        z = _forward_draw(config, inputs, draw)[-1]
        for p in range(4):
            sums[offset, :, p] = (z ** (p + 1)).sum(axis=1)
        per_draw[offset] = _excess_kurtosis_from_sums(sums[offset], config.width)
    return {"sums": sums, "per_draw": per_draw}


def normality_diagnostics(
    config: NetworkConfig,
    dataset: Dataset,
    samples: int,
    workers: int | None = None,
) -> KurtosisReport:
    """Excess kurtosis of final-layer preactivations pooled over draws and
    neurons, one value per input, with draw-level standard errors."""
    inputs = _as_inputs(dataset, config.n0)
    pooled = samples * config.width
    if pooled < 10**5:
        raise ValueError(f"need samples*width >= 1e5 pooled values, got {pooled}")
    stats = _map_draw_chunks(_kurtosis_chunk, config, inputs, samples, resolve_workers(workers))
    totals = neumaier_sum(stats["sums"])
    kurtosis = _excess_kurtosis_from_sums(totals, float(pooled))
    _, stderr = _mean_and_stderr(stats["per_draw"])
    return KurtosisReport(kurtosis, stderr, pooled, samples)


# ---------------------------------------------------------------------------
# JSON configuration loading
# ---------------------------------------------------------------------------


def load_simulation_file(path: str, seed: int) -> tuple[NetworkConfig, Dataset, str]:
    """Load a simulation config document: network, dataset, and mode.

    The document holds {"config": {...}, "dataset": {...}} and an
    optional "mode" of "covariance" (default) or "four_point".  The seed
    always comes from the caller, never from the file.
    """
    with open(path, encoding="utf-8") as handle:
        doc = json.load(handle)
    try:
        cfg = doc["config"]
        activation = cfg["activation"]
        spec = (
            get_activation(activation)
            if isinstance(activation, str)
            else spec_from_dict(activation)
        )
        config = make_config(int(cfg["n0"]), int(cfg["width"]), int(cfg["depth"]), spec, seed)
        ds = doc["dataset"]
        if "inputs" in ds:
            dataset = Dataset(np.asarray(ds["inputs"], dtype=np.float64))
        else:
            dataset = dataset_from_gram(np.asarray(ds["gram"], dtype=np.float64), config.n0)
        mode = doc.get("mode", "covariance")
        if mode not in ("covariance", "four_point"):
            raise ValueError(f"unknown simulation mode {mode!r}")
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed simulation config {path}: {exc}") from exc
    return config, dataset, mode


def config_to_dict(config: NetworkConfig) -> dict:
    return {
        "n0": config.n0,
        "width": config.width,
        "depth": config.depth,
        "activation": spec_to_dict(config.activation),
        "hyperparams": {
            "c_b": config.hyperparams.c_b,
            "c_w_first": config.hyperparams.c_w_first,
            "c_w": config.hyperparams.c_w,
        },
        "seed": config.seed,
    }


def doubled_width_config(config: NetworkConfig) -> NetworkConfig:
    return replace(config, width=2 * config.width)
