"""Binary network checkpoints.

Layout: magic bytes "PCCK", uint32 version (= 1), uint32 tensor count, then
per tensor: uint32 name length, UTF-8 name, uint32 rank, uint32 dims, and
the data as little-endian 64-bit floats in row-major order. All integers
are little-endian. Network structure and metadata travel as rank-0 tensors
under "meta." names.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .net import LowRankAdapter, NetworkConfig, VelocityNetwork

MAGIC = b"PCCK"
VERSION = 1


def write_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            data = np.ascontiguousarray(arr, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", data.ndim))
            for dim in data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(data.tobytes(order="C"))


def read_tensors(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version} not supported")
    offset = 12
    tensors: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            shape = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            n_items = int(np.prod(shape, dtype=np.int64)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f8", count=n_items, offset=offset)
            offset += 8 * n_items
            tensors[name] = arr.astype(np.float64).reshape(shape)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint") from exc
    if offset != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after last tensor")
    return tensors


def save_network(net: VelocityNetwork, path) -> None:
    cfg = net.cfg
    meta = {
        "meta.input_dim": cfg.input_dim,
        "meta.hidden_width": cfg.hidden_width,
        "meta.num_layers": cfg.num_layers,
        "meta.embed_dim": cfg.embed_dim,
        "meta.vocab_size": cfg.vocab_size,
        "meta.frozen": int(net.frozen),
        "meta.adapter_rank": 0 if net.adapter is None else net.adapter.rank,
        "meta.concept_token": -1 if net.concept_token is None else net.concept_token,
    }
    tensors = {k: np.asarray(float(v)) for k, v in meta.items()}
    tensors.update(net.parameters())
    write_tensors(path, tensors)


def load_network(path) -> VelocityNetwork:
    tensors = read_tensors(path)

    def meta(name):
        if name not in tensors:
            raise CheckpointError(f"{path}: missing {name}")
        return int(tensors[name].ravel()[0])

    cfg = NetworkConfig(
        input_dim=meta("meta.input_dim"),
        hidden_width=meta("meta.hidden_width"),
        num_layers=meta("meta.num_layers"),
        embed_dim=meta("meta.embed_dim"),
        vocab_size=meta("meta.vocab_size"),
    )
    try:
        block_weights = [tensors[f"blocks.{l}.W"] for l in range(cfg.num_layers)]
        block_biases = [tensors[f"blocks.{l}.b"] for l in range(cfg.num_layers)]
        adapter = None
        rank = meta("meta.adapter_rank")
        if rank > 0:
            adapter = LowRankAdapter(
                rank=rank,
                a_factors=[tensors[f"adapter.{l}.A"] for l in range(cfg.num_layers)],
                b_factors=[tensors[f"adapter.{l}.B"] for l in range(cfg.num_layers)],
            )
        concept = meta("meta.concept_token")
        net = VelocityNetwork(
            cfg,
            tensors["token_table"],
            tensors["layer_concept_embeds"],
            block_weights,
            block_biases,
            tensors["head.W"],
            tensors["head.b"],
            adapter=adapter,
            frozen=bool(meta("meta.frozen")),
            concept_token=None if concept < 0 else concept,
        )
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing tensor {exc}") from exc
    return net
