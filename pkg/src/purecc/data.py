"""Deterministic synthetic scenes: contexts, a displaced concept, vocabulary.

A scene is a mixture of isotropic Gaussian contexts. The personalized
concept is a cluster displaced from one context's center, so customization
has an exact ground truth: base-conditioned generation should stay on the
context, complete-conditioned generation should land on the displaced
cluster.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .condition import Condition
from .customization import CustomSet


@dataclass(frozen=True)
class ContextSpec:
    name: str
    center: tuple[float, ...]
    std: float


@dataclass(frozen=True)
class ConceptSpec:
    name: str
    displacement: tuple[float, ...]
    std: float


def _default_contexts():
    return (
        ContextSpec("left", (-1.2, 0.0), 0.25),
        ContextSpec("right", (1.2, 0.0), 0.25),
    )


def _default_concept():
    return ConceptSpec("v", (1.2, 1.6), 0.25)


@dataclass(frozen=True)
class SceneSpec:
    dim: int = 2
    contexts: tuple[ContextSpec, ...] = field(default_factory=_default_contexts)
    concept: ConceptSpec = field(default_factory=_default_concept)
    noise_std: float = 0.25

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("scene dimension must be >= 1")
        if len(self.contexts) < 2:
            raise ValueError("a scene needs at least two contexts")
        names = [c.name for c in self.contexts] + [self.concept.name]
        if len(set(names)) != len(names):
            raise ValueError("duplicate token names in scene")
        for ctx in self.contexts:
            if len(ctx.center) != self.dim:
                raise ValueError(f"context {ctx.name!r} center has wrong dimension")
            if ctx.std <= 0.0:
                raise ValueError("context std must be positive")
        if len(self.concept.displacement) != self.dim:
            raise ValueError("concept displacement has wrong dimension")
        if not any(v != 0.0 for v in self.concept.displacement):
            raise ValueError("concept displacement must be nonzero")
        if self.concept.std <= 0.0 or self.noise_std <= 0.0:
            raise ValueError("stds must be positive")

    def context(self, name: str) -> ContextSpec:
        for ctx in self.contexts:
            if ctx.name == name:
                return ctx
        raise KeyError(f"unknown context {name!r}")

    def concept_center(self, context_name: str) -> np.ndarray:
        ctx = self.context(context_name)
        return np.array(ctx.center) + np.array(self.concept.displacement)


@dataclass(frozen=True)
class Vocabulary:
    """Token ids: 0 null, 1..C contexts, C+1 class token, C+2 concept token."""

    context_names: tuple[str, ...]
    concept_name: str

    @property
    def size(self) -> int:
        return len(self.context_names) + 3

    @property
    def null_id(self) -> int:
        return 0

    def context_id(self, name: str) -> int:
        return 1 + self.context_names.index(name)

    @property
    def class_id(self) -> int:
        return len(self.context_names) + 1

    @property
    def concept_id(self) -> int:
        return len(self.context_names) + 2

    def null(self) -> Condition:
        return Condition.null()

    def base(self, context_name: str) -> Condition:
        return Condition("base", (self.class_id, self.context_id(context_name)))

    def complete(self, context_name: str) -> Condition:
        return Condition(
            "complete",
            (self.concept_id, self.class_id, self.context_id(context_name)),
            concept_slot=0,
        )

    def target(self) -> Condition:
        return Condition("target", (self.concept_id, self.class_id), concept_slot=0)


def vocabulary(spec: SceneSpec) -> Vocabulary:
    names = [c.name for c in spec.contexts]
    if len(set(names)) != len(names) or spec.concept.name in names:
        raise ValueError("duplicate token names in scene")
    return Vocabulary(tuple(names), spec.concept.name)


@dataclass
class Dataset:
    samples: np.ndarray
    conditions: list[Condition]
    spec: SceneSpec
    seed: int

    def __len__(self) -> int:
        return self.samples.shape[0]


def make_pretrain_set(spec: SceneSpec, n: int, seed: int) -> Dataset:
    """Samples drawn uniformly over contexts, conditioned on their base text."""
    if n < 1:
        raise ValueError("need at least one sample")
    vocab = vocabulary(spec)
    rng = np.random.default_rng(seed)
    which = rng.integers(0, len(spec.contexts), size=n)
    centers = np.array([c.center for c in spec.contexts])
    stds = np.array([c.std for c in spec.contexts])
    x = centers[which] + stds[which, None] * rng.standard_normal((n, spec.dim))
    conds = [vocab.base(spec.contexts[i].name) for i in which]
    return Dataset(samples=x, conditions=conds, spec=spec, seed=seed)


def make_custom_set(
    spec: SceneSpec, context_name: str, n_refs: int = 4, seed: int = 0
) -> CustomSet:
    """Few-shot reference set drawn from the concept cluster of one context."""
    if not 1 <= n_refs <= 16:
        raise ValueError("n_refs must lie in [1, 16]")
    ctx = spec.context(context_name)
    vocab = vocabulary(spec)
    rng = np.random.default_rng(seed)
    center = spec.concept_center(context_name)
    x = center + spec.concept.std * rng.standard_normal((n_refs, spec.dim))
    cond = vocab.complete(context_name)
    return CustomSet(references=tuple((x[i].copy(), cond) for i in range(n_refs)))
