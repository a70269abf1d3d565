"""Rectified-flow training and sampling.

Data couples to noise along straight lines x_t = (1-t) x0 + t x1 with
constant target velocity x1 - x0. Training regresses the network onto that
velocity (mean squared error over the batch, summed over dimensions);
sampling integrates the learned field with explicit Euler from t=1 to t=0.
Guidance recombines conditional and unconditional predictions with scale w
and is exposed in both its mixture form and its residual (implicit) form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .condition import Condition
from .errors import ConfigurationError, DivergenceError
from .net import VelocityNetwork


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 28
    guidance_w: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError("sampler needs at least one step")
        if self.guidance_w < 0.0:
            raise ConfigurationError("guidance scale must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 400
    learning_rate: float = 1e-4
    batch_size: int = 2
    cond_dropout_prob: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigurationError("iterations must be >= 0")
        if self.learning_rate <= 0.0 or self.batch_size < 1:
            raise ConfigurationError("learning rate and batch size must be positive")
        if not 0.0 <= self.cond_dropout_prob < 1.0:
            raise ConfigurationError("condition dropout must lie in [0, 1)")


@dataclass
class FlowBatch:
    x0: np.ndarray  # data samples, (n, d)
    x1: np.ndarray  # source/noise samples, (n, d)
    t: np.ndarray  # (n,) in [0, 1]
    y: Condition | list[Condition]

    def __post_init__(self):
        self.x0 = np.atleast_2d(np.asarray(self.x0, dtype=np.float64))
        self.x1 = np.atleast_2d(np.asarray(self.x1, dtype=np.float64))
        self.t = np.atleast_1d(np.asarray(self.t, dtype=np.float64))
        if self.x0.shape != self.x1.shape:
            raise ValueError("x0 and x1 shapes differ")
        if self.t.shape != (self.x0.shape[0],):
            raise ValueError("need one t per sample")
        if np.any(self.t < 0.0) or np.any(self.t > 1.0):
            raise ValueError("t must lie in [0, 1]")
        if self.x0.shape[0] == 0:
            raise ValueError("empty batch")


def interpolate(x0, x1, t):
    """Point on the straight path: (1-t) x0 + t x1."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
        raise ValueError("t must lie in [0, 1]")
    if x0.shape != x1.shape:
        raise ValueError("x0 and x1 shapes differ")
    if t_arr.ndim == 1 and x0.ndim == 2:
        t_arr = t_arr[:, None]
    return (1.0 - t_arr) * x0 + t_arr * x1


def target_velocity(x0, x1):
    """Constant velocity of the straight path: x1 - x0."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ValueError("x0 and x1 shapes differ")
    return x1 - x0


def velocity_regression(net, x_t, t, y, v_target, mask=None):
    """Squared-error regression of the conditional prediction onto v_target.

    Returns (loss, gradients, prediction): the loss is the batch mean of
    the per-sample squared norm, and gradients flow only through the
    prediction.
    """
    pred, cache = net.forward_with_cache(x_t, t, y)
    resid = pred - np.atleast_2d(np.asarray(v_target, dtype=np.float64))
    n = resid.shape[0]
    loss = float(np.mean(np.sum(resid * resid, axis=1)))
    grads = net.backward_cached(cache, (2.0 / n) * resid, mask)
    return loss, grads, pred


def cfm_loss(net, batch: FlowBatch):
    """Flow-matching loss of the batch and its gradients."""
    x_t = interpolate(batch.x0, batch.x1, batch.t)
    loss, grads, _ = velocity_regression(net, x_t, batch.t, batch.y, batch.x1 - batch.x0)
    return loss, grads


def train_flow(net: VelocityNetwork, dataset, cfg: TrainConfig):
    """SGD on the flow-matching loss with condition dropout.

    Each iteration draws a minibatch from the dataset, fresh noise, fresh
    times, and independently drops each sample's condition to null with
    probability cfg.cond_dropout_prob. Returns (trained copy, loss trace);
    the input network is left untouched.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    net = net.clone()
    rng = np.random.default_rng(cfg.seed)
    d = net.cfg.input_dim
    n_data = len(dataset)
    trace: list[float] = []
    null = Condition.null()
    for _ in range(cfg.iterations):
        idx = rng.integers(0, n_data, size=cfg.batch_size)
        x0 = dataset.samples[idx]
        conds = [dataset.conditions[i] for i in idx]
        x1 = rng.standard_normal((cfg.batch_size, d))
        t = rng.random(cfg.batch_size)
        drop = rng.random(cfg.batch_size) < cfg.cond_dropout_prob
        conds = [null if dr else c for c, dr in zip(conds, drop)]
        loss, grads = cfm_loss(net, FlowBatch(x0, x1, t, conds))
        if not np.isfinite(loss):
            raise DivergenceError(f"training loss became non-finite: {loss}")
        net.apply_gradients(grads, cfg.learning_rate)
        trace.append(loss)
    return net, trace


def cfg_velocity(net, x, t, y: Condition, w: float):
    """Guided velocity (1-w) v(x|null) + w v(x|y)."""
    v_cond = net.forward(x, t, y)
    v_null = net.forward(x, t, Condition.null())
    return (1.0 - w) * v_null + w * v_cond


def cfg_velocity_implicit(net, x, t, y: Condition, w: float):
    """Equivalent residual form: v(x|null) + w (v(x|y) - v(x|null))."""
    v_cond = net.forward(x, t, y)
    v_null = net.forward(x, t, Condition.null())
    return v_null + w * (v_cond - v_null)


def sample(net, y: Condition, n: int, cfg: SamplerConfig) -> np.ndarray:
    """Integrate the guided field from noise with explicit Euler, t: 1 -> 0."""
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(cfg.seed)
    x = rng.standard_normal((n, net.cfg.input_dim))
    dt = 1.0 / cfg.steps
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(cfg.steps):
            t = 1.0 - k * dt
            v = cfg_velocity(net, x, t, y, cfg.guidance_w)
            x = x - dt * v
            if not np.all(np.isfinite(x)):
                raise DivergenceError(f"sampling diverged at step {k + 1}")
    return x


def save_samples_csv(path, samples: np.ndarray) -> None:
    """Sample-set CSV: header dim0,dim1,..., 17-significant-digit floats."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    header = ",".join(f"dim{i}" for i in range(samples.shape[1]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in samples:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def load_samples_csv(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("dim"):
            raise ValueError(f"{path}: not a sample CSV")
        rows = [
            [float(v) for v in line.strip().split(",")] for line in fh if line.strip()
        ]
    return np.array(rows, dtype=np.float64).reshape(len(rows), len(header.split(",")))
