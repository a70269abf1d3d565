"""Preservation and fidelity metrics over sampled point sets.

Preservation drift is the KL divergence between smoothed histograms of
base-conditioned samples from the customized and original models (lower is
better). Concept fidelity is the fraction of complete-conditioned samples
landing nearest the ground-truth concept center. Behavior consistency
pairs chains by noise seed and measures how far the customized model's
complete-conditioned outputs sit from the original model's base outputs
once the known concept displacement is removed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import flow
from .data import SceneSpec, Vocabulary
from .flow import SamplerConfig


@dataclass(frozen=True)
class HistogramGrid:
    bins: int = 64
    low: float = -6.0
    high: float = 6.0
    smoothing_alpha: float = 1e-6

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError("need at least two bins per dimension")
        if not self.low < self.high:
            raise ValueError("empty histogram range")
        if self.smoothing_alpha <= 0.0:
            raise ValueError("smoothing mass must be positive")


def _smoothed_histogram(samples: np.ndarray, grid: HistogramGrid) -> np.ndarray:
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[0] == 0:
        raise ValueError("empty sample set")
    d = samples.shape[1]
    clipped = np.clip(samples, grid.low, grid.high)
    hist, _ = np.histogramdd(
        clipped, bins=[grid.bins] * d, range=[(grid.low, grid.high)] * d
    )
    hist += grid.smoothing_alpha
    return hist / hist.sum()


def histogram_kl(samples_p, samples_q, grid: HistogramGrid, symmetric: bool = False):
    """KL(P||Q) of smoothed normalized histograms; >= 0, 0 iff equal.

    With symmetric=True returns (KL(P||Q) + KL(Q||P)) / 2.
    """
    p = _smoothed_histogram(samples_p, grid)
    q = _smoothed_histogram(samples_q, grid)
    kl_pq = float(np.sum(p * np.log(p / q)))
    if not symmetric:
        return kl_pq
    kl_qp = float(np.sum(q * np.log(q / p)))
    return 0.5 * (kl_pq + kl_qp)


def preservation_drift(
    custom_model,
    original_model,
    vocab: Vocabulary,
    context_names,
    sampler_cfg: SamplerConfig,
    n: int,
    grid: HistogramGrid | None = None,
) -> dict[str, float]:
    """Per-context KL drift of base-conditioned sampling, shared seeds."""
    if custom_model.cfg.vocab_size != original_model.cfg.vocab_size or (
        custom_model.cfg.input_dim != original_model.cfg.input_dim
    ):
        raise ValueError("models disagree on vocabulary or dimension")
    grid = grid or HistogramGrid()
    drifts: dict[str, float] = {}
    for name in context_names:
        cond = vocab.base(name)
        s_custom = flow.sample(custom_model, cond, n, sampler_cfg)
        s_orig = flow.sample(original_model, cond, n, sampler_cfg)
        drifts[name] = histogram_kl(s_custom, s_orig, grid)
    return drifts


def concept_fidelity(
    custom_model,
    spec: SceneSpec,
    vocab: Vocabulary,
    context_name: str,
    sampler_cfg: SamplerConfig,
    n: int,
) -> float:
    """Fraction of complete-conditioned samples nearest the concept center."""
    centers = [np.asarray(c.center, dtype=np.float64) for c in spec.contexts]
    concept_center = spec.concept_center(context_name)
    centers.append(concept_center)
    centers = np.stack(centers)
    samples = flow.sample(custom_model, vocab.complete(context_name), n, sampler_cfg)
    dist = np.linalg.norm(samples[:, None, :] - centers[None, :, :], axis=2)
    nearest = dist.argmin(axis=1)
    return float(np.mean(nearest == len(centers) - 1))


def behavior_consistency(
    custom_model,
    original_model,
    spec: SceneSpec,
    vocab: Vocabulary,
    context_name: str,
    sampler_cfg: SamplerConfig,
    n: int,
) -> float:
    """Paired-seed distance after removing the known concept displacement.

    Zero means the customized model changed exactly and only the concept.
    """
    s_orig = flow.sample(original_model, vocab.base(context_name), n, sampler_cfg)
    s_custom = flow.sample(custom_model, vocab.complete(context_name), n, sampler_cfg)
    disp = np.asarray(spec.concept.displacement, dtype=np.float64)
    return float(np.mean(np.linalg.norm((s_custom - disp) - s_orig, axis=1)))


@dataclass
class RunArtifacts:
    """Everything the final report needs."""

    custom_model: object
    original_model: object
    spec: SceneSpec
    vocab: Vocabulary
    concept_context: str
    sampler_cfg: SamplerConfig
    n: int
    grid: HistogramGrid = field(default_factory=HistogramGrid)
    context_names: tuple[str, ...] | None = None


@dataclass
class EvalReport:
    kl_drift_per_context: dict[str, float]
    concept_fidelity: float
    behavior_consistency: float
    concept_context: str
    n: int
    seed: int

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["context", "metric", "value", "n", "seed"])
            for name in sorted(self.kl_drift_per_context):
                value = self.kl_drift_per_context[name]
                writer.writerow(
                    [name, "preservation_drift", f"{value:.17g}", self.n, self.seed]
                )
            writer.writerow(
                [
                    self.concept_context,
                    "concept_fidelity",
                    f"{self.concept_fidelity:.17g}",
                    self.n,
                    self.seed,
                ]
            )
            writer.writerow(
                [
                    self.concept_context,
                    "behavior_consistency",
                    f"{self.behavior_consistency:.17g}",
                    self.n,
                    self.seed,
                ]
            )

    @classmethod
    def from_csv(cls, path) -> "EvalReport":
        drift: dict[str, float] = {}
        fidelity = consistency = None
        concept_context = ""
        n = seed = 0
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["context", "metric", "value", "n", "seed"]:
                raise ValueError(f"{path}: unexpected report header")
            for context, metric, value, n_str, seed_str in reader:
                n, seed = int(n_str), int(seed_str)
                if metric == "preservation_drift":
                    drift[context] = float(value)
                elif metric == "concept_fidelity":
                    fidelity = float(value)
                    concept_context = context
                elif metric == "behavior_consistency":
                    consistency = float(value)
                else:
                    raise ValueError(f"{path}: unknown metric {metric!r}")
        if fidelity is None or consistency is None:
            raise ValueError(f"{path}: incomplete report")
        return cls(
            kl_drift_per_context=drift,
            concept_fidelity=fidelity,
            behavior_consistency=consistency,
            concept_context=concept_context,
            n=n,
            seed=seed,
        )


def report(artifacts: RunArtifacts, csv_path=None) -> EvalReport:
    """Compute all metrics for a finished run; optionally write the CSV."""
    names = artifacts.context_names
    if names is None:
        names = tuple(c.name for c in artifacts.spec.contexts)
    if not names:
        raise ValueError("no contexts to evaluate")
    drift = preservation_drift(
        artifacts.custom_model,
        artifacts.original_model,
        artifacts.vocab,
        names,
        artifacts.sampler_cfg,
        artifacts.n,
        artifacts.grid,
    )
    fidelity = concept_fidelity(
        artifacts.custom_model,
        artifacts.spec,
        artifacts.vocab,
        artifacts.concept_context,
        artifacts.sampler_cfg,
        artifacts.n,
    )
    consistency = behavior_consistency(
        artifacts.custom_model,
        artifacts.original_model,
        artifacts.spec,
        artifacts.vocab,
        artifacts.concept_context,
        artifacts.sampler_cfg,
        artifacts.n,
    )
    out = EvalReport(
        kl_drift_per_context=drift,
        concept_fidelity=fidelity,
        behavior_consistency=consistency,
        concept_context=artifacts.concept_context,
        n=artifacts.n,
        seed=artifacts.sampler_cfg.seed,
    )
    if csv_path is not None:
        out.to_csv(csv_path)
    return out
