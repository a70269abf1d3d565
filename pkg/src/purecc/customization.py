"""Pure concept customization: two-stage dual-branch training.

Stage 1 fine-tunes a low-rank adapted copy of the pretrained flow model on
the reference set, learning layer-wise concept slots; the result is frozen
and acts as the representation extractor. Stage 2 trains a second adapted
copy whose regression target combines its own base-conditioned prediction
with the extractor's target-minus-null bias, scaled by an adaptive
projection coefficient. The combined objective adds this regression to the
plain flow-matching loss with weight eta.

The composite regression target is detached data: no gradient flows
through the extractor, the projection coefficient, or the base-conditioned
prediction that anchors it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .condition import Condition
from .errors import (
    AdapterStateError,
    ConfigurationError,
    DivergenceError,
    FreezeViolationError,
)
from .flow import FlowBatch, cfm_loss, interpolate, velocity_regression
from .net import VelocityNetwork, attach_adapter, clone_frozen


@dataclass(frozen=True)
class CustomSet:
    """Few-shot reference set: (sample, complete condition) pairs."""

    references: tuple[tuple[np.ndarray, Condition], ...]

    def __post_init__(self):
        if not self.references:
            raise ValueError("custom set is empty")
        tokens = set()
        dims = set()
        for x0, cond in self.references:
            if cond.role != "complete":
                raise ValueError("custom-set conditions must be complete")
            tokens.add(cond.concept_token)
            dims.add(np.asarray(x0).shape)
        if len(tokens) != 1:
            raise ValueError("all references must share one concept token")
        if len(dims) != 1:
            raise ValueError("all references must share one sample shape")

    @property
    def n_refs(self) -> int:
        return len(self.references)

    @property
    def concept_token(self) -> int:
        return self.references[0][1].concept_token

    def x0_matrix(self) -> np.ndarray:
        return np.stack([x0 for x0, _ in self.references])

    def conditions(self) -> list[Condition]:
        return [cond for _, cond in self.references]


@dataclass
class GuidancePair:
    """The two representation-bias vectors of one step and their projection."""

    r_tar: np.ndarray
    r_learned: np.ndarray
    lambda_star: float
    degenerate: bool

    @classmethod
    def from_representations(cls, r_learned, r_tar, eps_guard: float = 1e-8):
        r_learned = np.asarray(r_learned, dtype=np.float64).ravel()
        r_tar = np.asarray(r_tar, dtype=np.float64).ravel()
        if r_learned.shape != r_tar.shape:
            raise ValueError("representation vectors have different dimensions")
        denom = float(r_tar @ r_tar)
        if denom < eps_guard:
            return cls(r_tar=r_tar, r_learned=r_learned, lambda_star=0.0, degenerate=True)
        lam = float(r_learned @ r_tar) / denom
        return cls(r_tar=r_tar, r_learned=r_learned, lambda_star=lam, degenerate=False)


@dataclass(frozen=True)
class PureCCConfig:
    eta: float = 1.0
    lambda_mode: str = "adaptive"  # "adaptive" or "fixed"
    lambda_fixed: float = 1.0
    original_mode: str = "theta2"  # "theta2" (trainable) or "theta3" (frozen copy)
    eps_guard: float = 1e-8
    iterations: int = 400
    learning_rate: float = 1e-4
    batch_size: int = 2
    rank: int = 4
    full_finetune: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.eta < 0.0:
            raise ConfigurationError("eta must be >= 0")
        if self.lambda_mode not in ("adaptive", "fixed"):
            raise ConfigurationError("lambda_mode must be adaptive or fixed")
        if self.lambda_fixed < 0.0:
            raise ConfigurationError("fixed lambda must be >= 0")
        if self.original_mode not in ("theta2", "theta3"):
            raise ConfigurationError("original_mode must be theta2 or theta3")
        if self.eps_guard <= 0.0:
            raise ConfigurationError("eps_guard must be positive")
        if self.iterations < 0 or self.learning_rate <= 0.0 or self.batch_size < 1:
            raise ConfigurationError("invalid training hyperparameters")
        if self.rank < 1:
            raise ConfigurationError("adapter rank must be >= 1")


@dataclass
class StepDiagnostics:
    loss_cc: float
    loss_purecc: float
    lambda_star: float
    r_tar_norm: float
    r_learned_norm: float
    degenerate: bool
    iteration: int = -1


# ----------------------------------------------------------------------
# stage 1: representation extractor


def train_extractor(pretrained: VelocityNetwork, custom_set: CustomSet, cfg: PureCCConfig):
    """Adapter fine-tune of the pretrained model on the reference set.

    Trains the adapter factors and the layer-wise concept slots on the
    flow-matching loss under the complete conditions, then freezes the
    result. Returns (extractor, per-iteration loss trace).
    """
    if pretrained.frozen:
        raise FreezeViolationError("extractor training needs an unfrozen model")
    if pretrained.adapter is not None:
        raise AdapterStateError("pretrained input already carries an adapter")
    adapted = attach_adapter(pretrained, cfg.rank, seed=cfg.seed + 1)
    rng = np.random.default_rng(cfg.seed)
    x0_all = custom_set.x0_matrix()
    conds_all = custom_set.conditions()
    d = adapted.cfg.input_dim
    trace: list[float] = []
    for _ in range(cfg.iterations):
        idx = rng.integers(0, custom_set.n_refs, size=cfg.batch_size)
        x1 = rng.standard_normal((cfg.batch_size, d))
        t = rng.random(cfg.batch_size)
        batch = FlowBatch(x0_all[idx], x1, t, [conds_all[i] for i in idx])
        loss, grads = cfm_loss(adapted, batch)
        if not np.isfinite(loss):
            raise DivergenceError(f"extractor training diverged: {loss}")
        adapted.apply_gradients(grads, cfg.learning_rate)
        trace.append(loss)
    adapted.concept_token = custom_set.concept_token
    return clone_frozen(adapted), trace


# ----------------------------------------------------------------------
# stage 2 building blocks


def target_guidance(extractor: VelocityNetwork, x_t, t, y_tar):
    """Target-concept bias of the frozen extractor: v(x|target) - v(x|null).

    Pure values; nothing backpropagates through this quantity.
    """
    if not extractor.frozen:
        raise FreezeViolationError("guidance must come from a frozen extractor")
    v_tar = extractor.forward(x_t, t, y_tar)
    v_null = extractor.forward(x_t, t, Condition.null())
    return v_tar - v_null


def learned_representation(trainable: VelocityNetwork, x_t, t, y_complete, y_base):
    """Concept representation inside the trainable model: complete - base."""
    v_complete = trainable.forward(x_t, t, y_complete)
    v_base = trainable.forward(x_t, t, y_base)
    return v_complete - v_base


def adaptive_lambda(r_learned, r_tar, eps_guard: float = 1e-8) -> float:
    """Projection coefficient of r_learned onto r_tar: <r_l, r_t> / |r_t|^2.

    Falls back to 0 when |r_t|^2 is below the guard.
    """
    return GuidancePair.from_representations(r_learned, r_tar, eps_guard).lambda_star


def purecc_target(v_original, r_tar, lam: float):
    """Composite regression target: v_original + lambda * r_tar (detached)."""
    v_original = np.asarray(v_original, dtype=np.float64)
    r_tar = np.asarray(r_tar, dtype=np.float64)
    if v_original.shape != r_tar.shape:
        raise ValueError("shape mismatch between original prediction and guidance")
    return v_original + lam * r_tar


def purecc_loss(trainable: VelocityNetwork, x_t, t, y_complete, v_purecc):
    """Regression of the complete-conditioned prediction onto the composite target."""
    loss, grads, _ = velocity_regression(trainable, x_t, t, y_complete, v_purecc)
    return loss, grads


# ----------------------------------------------------------------------
# stage 2: pure learning


def pure_learning_step(
    trainable: VelocityNetwork,
    extractor: VelocityNetwork,
    original_ref: VelocityNetwork | None,
    batch: FlowBatch,
    cfg: PureCCConfig,
):
    """One combined update of the trainable model.

    Shares a single (x0, x1, t) draw between the flow-matching term and the
    composite-target term, drives both through one forward/backward of the
    complete-conditioned prediction, and applies one SGD update. Returns
    (trainable, diagnostics); the network is updated in place.
    """
    if not extractor.frozen:
        raise FreezeViolationError("the extractor must be frozen during pure learning")
    if cfg.original_mode == "theta3" and original_ref is None:
        raise ValueError("original_mode theta3 needs a frozen original model")
    x_t = interpolate(batch.x0, batch.x1, batch.t)
    t = batch.t
    y_complete = batch.y
    conds = y_complete if isinstance(y_complete, list) else [y_complete] * batch.x0.shape[0]
    y_base = [c.base_part() for c in conds]
    y_tar = [c.target_part() for c in conds]

    pred, cache = trainable.forward_with_cache(x_t, t, y_complete)
    v2_base = trainable.forward(x_t, t, y_base)
    v_original = v2_base if cfg.original_mode == "theta2" else original_ref.forward(x_t, t, y_base)
    r_tar = target_guidance(extractor, x_t, t, y_tar)
    r_learned = pred - v2_base

    # One scalar per step: the batch representations are flattened into
    # single vectors, so the projection minimizes the batch-summed error
    # and the denominator cannot cancel across samples.
    pair = GuidancePair.from_representations(
        r_learned.ravel(), r_tar.ravel(), cfg.eps_guard
    )
    lam = pair.lambda_star if cfg.lambda_mode == "adaptive" else cfg.lambda_fixed
    v_purecc = purecc_target(v_original, r_tar, lam)

    n = pred.shape[0]
    resid_cc = pred - (batch.x1 - batch.x0)
    resid_pcc = pred - v_purecc
    loss_cc = float(np.mean(np.sum(resid_cc * resid_cc, axis=1)))
    loss_pcc = float(np.mean(np.sum(resid_pcc * resid_pcc, axis=1)))
    upstream = (2.0 / n) * resid_cc
    if cfg.eta != 0.0:
        upstream = upstream + cfg.eta * ((2.0 / n) * resid_pcc)
    loss = loss_cc + cfg.eta * loss_pcc
    if not np.isfinite(loss):
        raise DivergenceError(f"pure learning diverged: {loss}")
    grads = trainable.backward_cached(cache, upstream)
    trainable.apply_gradients(grads, cfg.learning_rate)

    diag = StepDiagnostics(
        loss_cc=loss_cc,
        loss_purecc=loss_pcc,
        lambda_star=lam,
        r_tar_norm=float(np.linalg.norm(pair.r_tar)),
        r_learned_norm=float(np.linalg.norm(pair.r_learned)),
        degenerate=pair.degenerate,
    )
    return trainable, diag


def _init_trainable(
    pretrained: VelocityNetwork,
    extractor: VelocityNetwork,
    custom_set: CustomSet,
    cfg: PureCCConfig,
) -> VelocityNetwork:
    if extractor.concept_token != custom_set.concept_token:
        raise ValueError(
            "extractor was trained for a different concept token than the custom set"
        )
    if cfg.full_finetune:
        trainable = pretrained.clone()
    else:
        trainable = attach_adapter(pretrained, cfg.rank, seed=cfg.seed + 1)
    # The extractor's learned slots are preserved and replace the concept
    # embeddings of the trainable model; they stay trainable.
    trainable.layer_concept_embeds = extractor.layer_concept_embeds.copy()
    trainable.concept_token = custom_set.concept_token
    return trainable


def customize(
    pretrained: VelocityNetwork,
    extractor: VelocityNetwork,
    custom_set: CustomSet,
    cfg: PureCCConfig,
):
    """Full stage-2 run: K pure-learning steps from a fresh adapted copy.

    Returns (customized network, diagnostic trace).
    """
    trainable = _init_trainable(pretrained, extractor, custom_set, cfg)
    original_ref = clone_frozen(pretrained) if cfg.original_mode == "theta3" else None
    rng = np.random.default_rng(cfg.seed)
    x0_all = custom_set.x0_matrix()
    conds_all = custom_set.conditions()
    d = trainable.cfg.input_dim
    trace: list[StepDiagnostics] = []
    for k in range(cfg.iterations):
        idx = rng.integers(0, custom_set.n_refs, size=cfg.batch_size)
        x1 = rng.standard_normal((cfg.batch_size, d))
        t = rng.random(cfg.batch_size)
        batch = FlowBatch(x0_all[idx], x1, t, [conds_all[i] for i in idx])
        _, diag = pure_learning_step(trainable, extractor, original_ref, batch, cfg)
        diag.iteration = k
        trace.append(diag)
    return trainable, trace


def finetune_plain(
    pretrained: VelocityNetwork,
    extractor: VelocityNetwork,
    custom_set: CustomSet,
    cfg: PureCCConfig,
):
    """Plain flow-matching fine-tune with the identical setup and draws.

    The baseline: same initialization (fresh adapter, slots copied from the
    extractor), same batch/noise/time stream, but only the flow-matching
    loss drives the update. With eta = 0, customize() walks the exact same
    parameter trajectory.
    """
    trainable = _init_trainable(pretrained, extractor, custom_set, cfg)
    rng = np.random.default_rng(cfg.seed)
    x0_all = custom_set.x0_matrix()
    conds_all = custom_set.conditions()
    d = trainable.cfg.input_dim
    trace: list[float] = []
    for _ in range(cfg.iterations):
        idx = rng.integers(0, custom_set.n_refs, size=cfg.batch_size)
        x1 = rng.standard_normal((cfg.batch_size, d))
        t = rng.random(cfg.batch_size)
        batch = FlowBatch(x0_all[idx], x1, t, [conds_all[i] for i in idx])
        loss, grads = cfm_loss(trainable, batch)
        if not np.isfinite(loss):
            raise DivergenceError(f"baseline fine-tune diverged: {loss}")
        trainable.apply_gradients(grads, cfg.learning_rate)
        trace.append(loss)
    return trainable, trace


# ----------------------------------------------------------------------
# diagnostic trace persistence

TRACE_COLUMNS = (
    "iter",
    "loss_cc",
    "loss_purecc",
    "lambda_star",
    "r_tar_norm",
    "r_learned_norm",
    "degenerate_flag",
)


def write_trace_csv(path, trace: list[StepDiagnostics]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for diag in trace:
            writer.writerow(
                [
                    diag.iteration,
                    f"{diag.loss_cc:.17g}",
                    f"{diag.loss_purecc:.17g}",
                    f"{diag.lambda_star:.17g}",
                    f"{diag.r_tar_norm:.17g}",
                    f"{diag.r_learned_norm:.17g}",
                    int(diag.degenerate),
                ]
            )


def read_trace_csv(path) -> list[StepDiagnostics]:
    out: list[StepDiagnostics] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected trace header {header}")
        for row in reader:
            out.append(
                StepDiagnostics(
                    iteration=int(row[0]),
                    loss_cc=float(row[1]),
                    loss_purecc=float(row[2]),
                    lambda_star=float(row[3]),
                    r_tar_norm=float(row[4]),
                    r_learned_norm=float(row[5]),
                    degenerate=bool(int(row[6])),
                )
            )
    return out
