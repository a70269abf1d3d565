"""Conditional velocity-field network with exact hand-written gradients.

The network maps (x, t, condition) to a velocity of the same dimension as
x. Each of the L hidden blocks is an affine map over the previous
activation concatenated with that layer's pooled conditioning vector,
followed by tanh; the head is a plain affine map. Conditioning vectors are
mean-pooled token embeddings, where the concept token's embedding is
replaced per layer by a tunable slot. Time enters as appended features
(t, sin 2*pi*t, cos 2*pi*t). All math is float64.

Three independently-owned instances of this network play the roles of the
frozen representation extractor, the trainable customized model, and the
optional frozen original model.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .condition import NULL_TOKEN, Condition
from .errors import AdapterStateError, ConfigurationError, FreezeViolationError

TWO_PI = 2.0 * np.pi
N_TIME_FEATURES = 3


@dataclass(frozen=True)
class NetworkConfig:
    """Shape of the velocity network; activation and time encoding are fixed."""

    input_dim: int
    hidden_width: int = 32
    num_layers: int = 3
    embed_dim: int = 32
    vocab_size: int = 5

    def __post_init__(self):
        if min(self.input_dim, self.hidden_width, self.embed_dim) < 1:
            raise ConfigurationError("all network widths must be >= 1")
        if self.num_layers < 1:
            raise ConfigurationError("the network needs at least one layer")
        if self.vocab_size < 2:
            raise ConfigurationError(
                "vocab_size must cover the null token plus at least one real token"
            )

    def block_in_dim(self, layer: int) -> int:
        first = self.input_dim + N_TIME_FEATURES + self.embed_dim
        return first if layer == 0 else self.hidden_width + self.embed_dim


@dataclass
class LowRankAdapter:
    """Low-rank residual factors per block: the adapted block adds B @ (A @ u)."""

    rank: int
    a_factors: list[np.ndarray]  # per block, (rank, in_dim)
    b_factors: list[np.ndarray]  # per block, (hidden_width, rank)
    scale: float = 1.0


@dataclass
class Gradients:
    """One array per parameter tensor; masked-out tensors carry zeros."""

    tensors: dict[str, np.ndarray]
    mask: frozenset[str]


class VelocityNetwork:
    def __init__(
        self,
        cfg: NetworkConfig,
        token_table: np.ndarray,
        layer_concept_embeds: np.ndarray,
        block_weights: list[np.ndarray],
        block_biases: list[np.ndarray],
        head_weight: np.ndarray,
        head_bias: np.ndarray,
        adapter: LowRankAdapter | None = None,
        frozen: bool = False,
        concept_token: int | None = None,
    ):
        self.cfg = cfg
        self.token_table = token_table
        self.layer_concept_embeds = layer_concept_embeds
        self.block_weights = block_weights
        self.block_biases = block_biases
        self.head_weight = head_weight
        self.head_bias = head_bias
        self.adapter = adapter
        self.frozen = frozen
        # Metadata recording which concept id the network was customized for.
        self.concept_token = concept_token

    # ------------------------------------------------------------------
    # parameter bookkeeping

    def parameters(self) -> dict[str, np.ndarray]:
        params = {
            "token_table": self.token_table,
            "layer_concept_embeds": self.layer_concept_embeds,
        }
        for l in range(self.cfg.num_layers):
            params[f"blocks.{l}.W"] = self.block_weights[l]
            params[f"blocks.{l}.b"] = self.block_biases[l]
        params["head.W"] = self.head_weight
        params["head.b"] = self.head_bias
        if self.adapter is not None:
            for l in range(self.cfg.num_layers):
                params[f"adapter.{l}.A"] = self.adapter.a_factors[l]
                params[f"adapter.{l}.B"] = self.adapter.b_factors[l]
        return params

    def trainable_mask(self) -> frozenset[str]:
        """Tensors updated in the current stage.

        Frozen networks train nothing; adapted networks train the adapter
        factors and the layer-wise concept slots; plain networks train
        everything (the null embedding row stays pinned regardless).
        """
        if self.frozen:
            return frozenset()
        if self.adapter is not None:
            names = {"layer_concept_embeds"}
            for l in range(self.cfg.num_layers):
                names.add(f"adapter.{l}.A")
                names.add(f"adapter.{l}.B")
            return frozenset(names)
        return frozenset(self.parameters())

    def zero_gradients(self, mask: frozenset[str]) -> Gradients:
        tensors = {k: np.zeros_like(v) for k, v in self.parameters().items()}
        return Gradients(tensors=tensors, mask=mask)

    def clone(self) -> "VelocityNetwork":
        return copy.deepcopy(self)

    def apply_gradients(self, grads: Gradients, learning_rate: float) -> None:
        """One SGD step over the gradient mask. Errors on frozen networks."""
        if self.frozen:
            raise FreezeViolationError("cannot update a frozen network")
        params = self.parameters()
        for name in grads.mask:
            params[name] -= learning_rate * grads.tensors[name]
        self.token_table[NULL_TOKEN, :] = 0.0

    # ------------------------------------------------------------------
    # conditioning

    def encode_condition(self, y: Condition, layer: int) -> np.ndarray:
        """Pooled conditioning vector for one layer.

        Mean of the token embeddings, with the concept token's embedding
        replaced by this layer's tunable slot.
        """
        if not 0 <= layer < self.cfg.num_layers:
            raise IndexError(f"layer {layer} out of range")
        rows = np.empty((len(y.token_ids), self.cfg.embed_dim))
        for pos, tok in enumerate(y.token_ids):
            if pos == y.concept_slot:
                rows[pos] = self.layer_concept_embeds[layer]
            else:
                if tok >= self.cfg.vocab_size:
                    raise IndexError(f"token id {tok} out of vocabulary")
                rows[pos] = self.token_table[tok]
        return rows.mean(axis=0)

    # ------------------------------------------------------------------
    # forward / backward

    def forward(self, x, t, y) -> np.ndarray:
        X, T, conds, single = _coerce_inputs(self.cfg, x, t, y)
        out, _ = self._run_forward(X, T, conds, keep_cache=False)
        return out[0] if single else out

    def forward_with_cache(self, x, t, y):
        """Batched forward returning (velocities, cache) for a later backward."""
        X, T, conds, _ = _coerce_inputs(self.cfg, x, t, y)
        return self._run_forward(X, T, conds, keep_cache=True)

    def backward(self, x, t, y, upstream, mask=None) -> Gradients:
        out, cache = self.forward_with_cache(x, t, y)
        up = np.ascontiguousarray(np.atleast_2d(np.asarray(upstream, dtype=np.float64)))
        if up.shape != out.shape:
            raise ValueError("upstream shape does not match the forward output")
        return self.backward_cached(cache, up, mask)

    def backward_cached(self, cache, upstream, mask=None) -> Gradients:
        """Exact reverse-mode gradients given a forward cache.

        The returned Gradients hold one array per parameter tensor;
        tensors outside the mask are zero. The null token's embedding row
        is pinned and never receives gradient.
        """
        if mask is None:
            mask = self.trainable_mask()
        else:
            mask = frozenset(mask)
            unknown = mask - set(self.parameters())
            if unknown:
                raise ValueError(f"unknown tensors in mask: {sorted(unknown)}")
        if self.frozen and mask:
            raise FreezeViolationError(
                "backward with a non-empty trainable mask on a frozen network"
            )
        cfg = self.cfg
        L = cfg.num_layers
        acts = cache["acts"]  # [input feats, a_0, ..., a_{L-1}]
        us = cache["us"]
        ss = cache["ss"]
        uniq, inv = cache["cond_groups"]

        g: dict[str, np.ndarray] = {}
        up = np.ascontiguousarray(upstream)
        g["head.W"] = kernels.affine_bwd_w(up, acts[L])
        g["head.b"] = kernels.colsum(up)
        da = kernels.affine_bwd_x(up, self.head_weight)

        d_token = np.zeros_like(self.token_table)
        d_slots = np.zeros_like(self.layer_concept_embeds)
        for l in reversed(range(L)):
            dz = kernels.tanh_bwd(acts[l + 1], da)
            g[f"blocks.{l}.W"] = kernels.affine_bwd_w(dz, us[l])
            g[f"blocks.{l}.b"] = kernels.colsum(dz)
            du = kernels.affine_bwd_x(dz, self.block_weights[l])
            if self.adapter is not None:
                ds = kernels.affine_bwd_x(dz, self.adapter.b_factors[l])
                g[f"adapter.{l}.B"] = kernels.affine_bwd_w(dz, ss[l])
                g[f"adapter.{l}.A"] = kernels.affine_bwd_w(ds, us[l])
                du += kernels.affine_bwd_x(ds, self.adapter.a_factors[l])
            prev_width = acts[l].shape[1]
            da = np.ascontiguousarray(du[:, :prev_width])
            dc = du[:, prev_width:]
            # Pooled-embedding backward: distribute each condition's share of
            # the conditioning gradient over its token rows / layer slot.
            dsum = np.zeros((len(uniq), cfg.embed_dim))
            np.add.at(dsum, inv, dc)
            for j, cond in enumerate(uniq):
                share = dsum[j] / len(cond.token_ids)
                for pos, tok in enumerate(cond.token_ids):
                    if pos == cond.concept_slot:
                        d_slots[l] += share
                    elif tok != NULL_TOKEN:
                        d_token[tok] += share
        g["token_table"] = d_token
        g["layer_concept_embeds"] = d_slots

        tensors = {}
        for name, param in self.parameters().items():
            if name in mask:
                tensors[name] = g.get(name, np.zeros_like(param))
            else:
                tensors[name] = np.zeros_like(param)
        return Gradients(tensors=tensors, mask=mask)

    def _run_forward(self, X, T, conds, keep_cache):
        cfg = self.cfg
        n = X.shape[0]
        feats = np.empty((n, cfg.input_dim + N_TIME_FEATURES))
        feats[:, : cfg.input_dim] = X
        feats[:, cfg.input_dim] = T
        feats[:, cfg.input_dim + 1] = np.sin(TWO_PI * T)
        feats[:, cfg.input_dim + 2] = np.cos(TWO_PI * T)

        uniq, inv = _group_conditions(conds, n)
        a = feats
        acts = [feats]
        us: list[np.ndarray] = []
        ss: list[np.ndarray | None] = []
        for l in range(cfg.num_layers):
            c_uniq = np.stack([self.encode_condition(c, l) for c in uniq])
            u = np.ascontiguousarray(np.concatenate([a, c_uniq[inv]], axis=1))
            pre = kernels.affine_fwd(u, self.block_weights[l], self.block_biases[l])
            s = None
            if self.adapter is not None:
                s = kernels.affine_fwd(u, self.adapter.a_factors[l], None)
                pre += kernels.affine_fwd(s, self.adapter.b_factors[l], None)
            a = kernels.tanh_fwd(np.ascontiguousarray(pre))
            us.append(u)
            ss.append(s)
            acts.append(a)
        out = kernels.affine_fwd(a, self.head_weight, self.head_bias)
        cache = None
        if keep_cache:
            cache = {"acts": acts, "us": us, "ss": ss, "cond_groups": (uniq, inv)}
        return out, cache


def _coerce_inputs(cfg, x, t, y):
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = np.ascontiguousarray(np.atleast_2d(X))
    if X.ndim != 2 or X.shape[1] != cfg.input_dim:
        raise ValueError(f"x must have dimension {cfg.input_dim}")
    n = X.shape[0]
    T = np.asarray(t, dtype=np.float64)
    if T.ndim == 0:
        T = np.full(n, float(T))
    elif T.shape != (n,):
        raise ValueError("t must be a scalar or a vector matching the batch")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(T)):
        raise ValueError("non-finite network input")
    if np.any(T < 0.0) or np.any(T > 1.0):
        raise ValueError("t must lie in [0, 1]")
    if isinstance(y, Condition):
        conds = y
    else:
        conds = list(y)
        if len(conds) != n:
            raise ValueError("need one condition per sample")
    return X, T, conds, single


def _group_conditions(conds, n):
    if isinstance(conds, Condition):
        return [conds], np.zeros(n, dtype=np.intp)
    index: dict[Condition, int] = {}
    inv = np.empty(n, dtype=np.intp)
    uniq: list[Condition] = []
    for i, c in enumerate(conds):
        j = index.get(c)
        if j is None:
            j = len(uniq)
            index[c] = j
            uniq.append(c)
        inv[i] = j
    return uniq, inv


# ----------------------------------------------------------------------
# construction and structural operations


def build_network(cfg: NetworkConfig, seed: int) -> VelocityNetwork:
    """Deterministically initialized network.

    Weights are uniform in [-s, s] with s = 1/sqrt(fan_in); biases start at
    zero. The null token's embedding row is zeroed and stays pinned. The
    layer-wise concept slots start as copies of the concept token's shared
    embedding (the last vocabulary row), which makes them equivalent to
    vanilla token conditioning until trained.
    """
    rng = np.random.default_rng(seed)
    s_embed = 1.0 / np.sqrt(cfg.embed_dim)
    token_table = rng.uniform(-s_embed, s_embed, (cfg.vocab_size, cfg.embed_dim))
    token_table[NULL_TOKEN, :] = 0.0
    block_weights = []
    block_biases = []
    for l in range(cfg.num_layers):
        in_dim = cfg.block_in_dim(l)
        s = 1.0 / np.sqrt(in_dim)
        block_weights.append(rng.uniform(-s, s, (cfg.hidden_width, in_dim)))
        block_biases.append(np.zeros(cfg.hidden_width))
    s_head = 1.0 / np.sqrt(cfg.hidden_width)
    head_weight = rng.uniform(-s_head, s_head, (cfg.input_dim, cfg.hidden_width))
    head_bias = np.zeros(cfg.input_dim)
    layer_slots = np.tile(token_table[cfg.vocab_size - 1], (cfg.num_layers, 1))
    return VelocityNetwork(
        cfg,
        token_table,
        layer_slots,
        block_weights,
        block_biases,
        head_weight,
        head_bias,
    )


def encode_condition(net: VelocityNetwork, y: Condition, layer: int) -> np.ndarray:
    return net.encode_condition(y, layer)


def forward(net: VelocityNetwork, x, t, y) -> np.ndarray:
    return net.forward(x, t, y)


def backward(net: VelocityNetwork, x, t, y, upstream, mask=None) -> Gradients:
    return net.backward(x, t, y, upstream, mask)


def attach_adapter(net: VelocityNetwork, rank: int, seed: int) -> VelocityNetwork:
    """Adapted copy: low-rank factors on every block, base weights frozen.

    A factors are initialized like the base weights, B factors start at
    zero, so the adapted network is functionally identical to the base.
    Trainable tensors become the adapter factors plus the concept slots.
    """
    if rank < 1:
        raise ConfigurationError("adapter rank must be >= 1")
    if net.adapter is not None:
        raise AdapterStateError("network already carries an adapter")
    rng = np.random.default_rng(seed)
    adapted = net.clone()
    a_factors = []
    b_factors = []
    for l in range(net.cfg.num_layers):
        in_dim = net.cfg.block_in_dim(l)
        s = 1.0 / np.sqrt(in_dim)
        a_factors.append(rng.uniform(-s, s, (rank, in_dim)))
        b_factors.append(np.zeros((net.cfg.hidden_width, rank)))
    adapted.adapter = LowRankAdapter(rank=rank, a_factors=a_factors, b_factors=b_factors)
    return adapted


def merge_adapter(net: VelocityNetwork) -> VelocityNetwork:
    """Plain copy with the low-rank update folded in: W' = W + B @ A."""
    if net.adapter is None:
        raise AdapterStateError("network has no adapter to merge")
    merged = net.clone()
    for l in range(net.cfg.num_layers):
        merged.block_weights[l] = (
            net.block_weights[l] + net.adapter.b_factors[l] @ net.adapter.a_factors[l]
        )
    merged.adapter = None
    return merged


def clone_frozen(net: VelocityNetwork) -> VelocityNetwork:
    """Deep copy with updates forbidden."""
    frozen = net.clone()
    frozen.frozen = True
    return frozen
