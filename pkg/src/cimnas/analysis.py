"""Monte-Carlo output-change study.

For a fixed input, the clean logits ``O_ori = F(W_exp, I)`` are compared with
``K`` deployed outputs ``F(W_exp + N_j, I)``.  Each logit's change is
histogrammed over ``N`` equal-width bins spanning its empirical range and
scored against the maximum-likelihood Gaussian with two metrics:

    MSE = mean_i (O_i - E_i)**2
    chi2 = sum_i (O_i - E_i)**2 / E_i

where ``O_i`` is the observed and ``E_i`` the Gaussian bin probability.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import DegenerateFitError, ShapeError
from .nn import Model, forward, softmax
from .noise import NoiseSpec, noise_map

EPS = 1e-12


@dataclass
class OutputChangeSamples:
    changes: np.ndarray  # (K, C)
    input_id: int
    noise: NoiseSpec
    clean: np.ndarray | None = None


@dataclass
class ElementFit:
    index: int
    degenerate: bool
    mean: float = 0.0
    std: float = 0.0
    edges: np.ndarray = field(default_factory=lambda: np.zeros(0))
    observed: np.ndarray = field(default_factory=lambda: np.zeros(0))
    expected: np.ndarray = field(default_factory=lambda: np.zeros(0))
    chi_square: float = float("nan")
    mse: float = float("nan")
    excluded_bins: int = 0

    def to_dict(self) -> dict:
        d = {"index": self.index, "degenerate": self.degenerate}
        if not self.degenerate:
            d.update(
                mean=self.mean,
                std=self.std,
                chi_square=self.chi_square,
                mse=self.mse,
                excluded_bins=self.excluded_bins,
                edges=self.edges.tolist(),
                observed=self.observed.tolist(),
                expected=self.expected.tolist(),
            )
        return d


@dataclass
class FitReport:
    elements: list[ElementFit]
    n_bins: int
    n_samples: int
    noise: NoiseSpec
    input_index: int = 0
    post_softmax: bool = False

    @property
    def fitted(self) -> list[ElementFit]:
        return [e for e in self.elements if not e.degenerate]

    @property
    def mean_chi_square(self) -> float:
        fits = self.fitted
        return float(np.mean([e.chi_square for e in fits])) if fits else float("nan")

    @property
    def mean_mse(self) -> float:
        fits = self.fitted
        return float(np.mean([e.mse for e in fits])) if fits else float("nan")

    def to_dict(self) -> dict:
        return {
            "kind": "fit_report",
            "n_bins": self.n_bins,
            "n_samples": self.n_samples,
            "input_index": self.input_index,
            "post_softmax": self.post_softmax,
            "noise": self.noise.to_dict(),
            "mean_chi_square": None if not self.fitted else self.mean_chi_square,
            "mean_mse": None if not self.fitted else self.mean_mse,
            "degenerate_elements": sum(e.degenerate for e in self.elements),
            "elements": [e.to_dict() for e in self.elements],
        }


def _outputs(model, weights, x, noise, post_softmax):
    out = forward(model, x, weights=weights, noise=noise).astype(np.float64)
    return softmax(out) if post_softmax else out


def output_change(model: Model, w_exp, input: np.ndarray, spec: NoiseSpec, sample_index: int,
                  post_softmax: bool = False) -> np.ndarray:
    """``F(W_exp + N_j, I) - F(W_exp, I)`` for one noise sample."""
    clean = _outputs(model, w_exp, input, None, post_softmax)
    noisy = _outputs(model, w_exp, input, noise_map(w_exp, spec, sample_index), post_softmax)
    return noisy - clean


def collect_changes(model: Model, w_exp, input: np.ndarray, spec: NoiseSpec, K: int,
                    input_id: int = 0, post_softmax: bool = False) -> OutputChangeSamples:
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    w_exp = model.params if w_exp is None else w_exp
    clean = _outputs(model, w_exp, input, None, post_softmax)
    changes = np.empty((K, clean.shape[-1]))
    for j in range(K):
        if spec.is_null:
            changes[j] = 0.0
            continue
        changes[j] = _outputs(model, w_exp, input, noise_map(w_exp, spec, j), post_softmax) - clean
    return OutputChangeSamples(changes, input_id, spec, clean)


def gaussian_fit(samples) -> tuple[float, float]:
    """Maximum-likelihood mean and (divisor-K) standard deviation."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        raise DegenerateFitError("gaussian_fit needs at least two samples")
    mu = float(x.mean())
    sd = float(x.std())
    if sd == 0.0 or x.max() == x.min():
        raise DegenerateFitError("samples have zero variance")
    return mu, sd


def histogram_probabilities(samples, n_bins: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Observed bin probabilities and the ``n_bins + 1`` edges over [min, max]."""
    if n_bins < 2:
        raise ValueError(f"n_bins must be >= 2, got {n_bins}")
    x = np.asarray(samples, dtype=np.float64)
    lo, hi = float(x.min()), float(x.max())
    if not hi > lo:
        raise DegenerateFitError("samples span an empty range")
    counts, edges = np.histogram(x, bins=n_bins, range=(lo, hi))
    return counts / x.size, edges


def expected_probabilities(mean: float, std: float, edges) -> np.ndarray:
    """Gaussian mass in each bin, using the upper tail where it is more accurate."""
    if not std > 0:
        raise DegenerateFitError("std must be positive")
    z = (np.asarray(edges, dtype=np.float64) - mean) / std
    lo, hi = z[:-1], z[1:]
    lower_side = ndtr(hi) - ndtr(lo)
    upper_side = ndtr(-lo) - ndtr(-hi)
    return np.where(lo >= 0, upper_side, lower_side)


def mse_metric(observed, expected) -> float:
    o, e = np.asarray(observed, np.float64), np.asarray(expected, np.float64)
    if o.shape != e.shape:
        raise ShapeError(f"mse_metric: length mismatch {o.shape} vs {e.shape}")
    return float(np.mean((o - e) ** 2))


def chi_square_metric(observed, expected, eps: float = EPS) -> tuple[float, int]:
    """Chi-square over bins with ``E_i >= eps``; returns (value, excluded bin count)."""
    o, e = np.asarray(observed, np.float64), np.asarray(expected, np.float64)
    if o.shape != e.shape:
        raise ShapeError(f"chi_square_metric: length mismatch {o.shape} vs {e.shape}")
    keep = e >= eps
    if not keep.any():
        raise DegenerateFitError("every bin has negligible expected probability")
    return float(np.sum((o[keep] - e[keep]) ** 2 / e[keep])), int((~keep).sum())


def fit_element(samples, n_bins: int = 100, index: int = 0) -> ElementFit:
    try:
        mu, sd = gaussian_fit(samples)
        observed, edges = histogram_probabilities(samples, n_bins)
    except DegenerateFitError:
        return ElementFit(index=index, degenerate=True)
    expected = expected_probabilities(mu, sd, edges)
    chi2, excluded = chi_square_metric(observed, expected)
    return ElementFit(index, False, mu, sd, edges, observed, expected, chi2,
                      mse_metric(observed, expected), excluded)


def fit_changes(samples: OutputChangeSamples, n_bins: int = 100, post_softmax: bool = False) -> FitReport:
    elements = [fit_element(samples.changes[:, c], n_bins, c) for c in range(samples.changes.shape[1])]
    return FitReport(elements, n_bins, len(samples.changes), samples.noise, samples.input_id, post_softmax)


def run_study(model: Model, dataset, spec: NoiseSpec, K: int = 10_000, n_bins: int = 100,
              input_index: int = 0, post_softmax: bool = False) -> FitReport:
    """Fit a Gaussian to every output element's change for one test input."""
    if not 0 <= input_index < len(dataset):
        raise IndexError(f"input index {input_index} outside dataset of size {len(dataset)}")
    samples = collect_changes(model, model.params, dataset.images[input_index], spec, K,
                              input_id=input_index, post_softmax=post_softmax)
    return fit_changes(samples, n_bins, post_softmax)


def histogram_table(report: FitReport) -> str:
    """Plain-text table: element, bin center, observed, expected, one bin per line."""
    lines = ["# element bin_center observed expected"]
    for e in report.fitted:
        centers = 0.5 * (e.edges[:-1] + e.edges[1:])
        for c, o, x in zip(centers, e.observed, e.expected):
            lines.append(f"{e.index} {c:.9g} {o:.9g} {x:.9g}")
    return "\n".join(lines) + "\n"
