"""Model persistence: a canonical JSON container with explicit shape headers.

The byte encoding is canonical (sorted keys, fixed separators, shortest
round-trip float repr), so identical parameters always produce identical
files and the SHA-256 of the container doubles as the model hash used by
the determinism checks.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..annotate import LabelSchema
from ..embed import EmbedderConfig, HashedEmbedder, RemoteEmbedder, TableEmbedder
from ..errors import ModelFormatError
from ..hashing import bytes_sha256
from .crf import NEG_INF, structural_mask
from .gru import GruDirection, GruParams
from .network import MODEL_FORMAT_VERSION, SequenceModel, _DIRECTION_FIELDS


def _tensor_entry(name: str, array: np.ndarray) -> dict:
    return {
        "name": name,
        "shape": list(array.shape),
        "data": [float(v) for v in np.asarray(array, dtype=np.float64).ravel()],
    }


def model_to_bytes(model: SequenceModel) -> bytes:
    tensors = [
        _tensor_entry("emit.w", model.w_emit),
        _tensor_entry("emit.b", model.b_emit),
        _tensor_entry("crf.trans", model.transitions),
    ]
    for direction in ("fwd", "bwd"):
        block = getattr(model.gru, direction)
        for field_name in _DIRECTION_FIELDS:
            tensors.append(_tensor_entry(f"gru.{direction}.{field_name}", getattr(block, field_name)))

    table_vocab = None
    if isinstance(model.embedder, (HashedEmbedder, TableEmbedder)):
        tensors.append(_tensor_entry("embed.table", model.embedder.table))
        if isinstance(model.embedder, TableEmbedder):
            table_vocab = model.embedder.vocab

    cfg = model.embed_config
    container = {
        "format_version": MODEL_FORMAT_VERSION,
        "schema": {"entity_types": list(model.schema.entity_types)},
        "embedder": {
            "backend": cfg.backend,
            "dim": cfg.dim,
            "vocab_buckets": cfg.vocab_buckets,
            "seed": cfg.seed,
            "text_channel": cfg.text_channel,
            "endpoint": cfg.endpoint,
            "vectors": cfg.vectors,
        },
        "hidden_size": model.hidden_size,
        "use_crf": model.use_crf,
        "hard_bio_constraints": model.hard_bio_constraints,
        "tensors": sorted(tensors, key=lambda t: t["name"]),
        "table_vocab": table_vocab,
    }
    return (json.dumps(container, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def save_model(model: SequenceModel, path: str | Path) -> str:
    """Write the container; returns its SHA-256 hex digest."""
    blob = model_to_bytes(model)
    Path(path).write_bytes(blob)
    return bytes_sha256(blob)


def model_hash(model: SequenceModel) -> str:
    return bytes_sha256(model_to_bytes(model))


def _take_tensor(tensors: dict[str, dict], name: str, shape: tuple[int, ...]) -> np.ndarray:
    entry = tensors.get(name)
    if entry is None:
        raise ModelFormatError(f"missing tensor {name!r}")
    declared = tuple(entry["shape"])
    if declared != shape:
        raise ModelFormatError(f"tensor {name!r} has shape {declared}, expected {shape}")
    data = np.asarray(entry["data"], dtype=np.float64)
    if data.size != int(np.prod(shape, dtype=np.int64)):
        raise ModelFormatError(f"tensor {name!r} data length {data.size} != shape {shape}")
    array = data.reshape(shape)
    if not np.all(np.isfinite(array)):
        raise ModelFormatError(f"tensor {name!r} contains non-finite values")
    return array


def load_model(path: str | Path) -> SequenceModel:
    """Load and validate a persisted model (shapes, masks, schema width)."""
    try:
        container = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"unreadable model file: {exc}") from exc
    if container.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported format_version {container.get('format_version')!r}"
        )

    schema = LabelSchema(entity_types=tuple(container["schema"]["entity_types"]))
    k = schema.num_labels
    emb = container["embedder"]
    embed_config = EmbedderConfig(
        backend=emb["backend"],
        dim=int(emb["dim"]),
        vocab_buckets=int(emb["vocab_buckets"]),
        seed=int(emb["seed"]),
        text_channel=emb["text_channel"],
        endpoint=emb.get("endpoint"),
        vectors=emb.get("vectors"),
    )
    hidden = int(container["hidden_size"])
    tensors = {t["name"]: t for t in container["tensors"]}

    dim = embed_config.dim
    directions = {}
    for direction in ("fwd", "bwd"):
        shapes = {
            "w_z": (dim, hidden), "w_r": (dim, hidden), "w_h": (dim, hidden),
            "u_z": (hidden, hidden), "u_r": (hidden, hidden), "u_h": (hidden, hidden),
            "b_z": (hidden,), "b_r": (hidden,), "b_h": (hidden,),
        }
        directions[direction] = GruDirection(
            **{name: _take_tensor(tensors, f"gru.{direction}.{name}", shape)
               for name, shape in shapes.items()}
        )
    gru = GruParams(fwd=directions["fwd"], bwd=directions["bwd"])

    w_emit = _take_tensor(tensors, "emit.w", (2 * hidden, k))
    b_emit = _take_tensor(tensors, "emit.b", (k,))
    transitions = _take_tensor(tensors, "crf.trans", (k + 2, k + 2))
    mask = structural_mask(k)
    if not np.all(transitions[mask] == NEG_INF):
        raise ModelFormatError("masked transition cells must equal NEG_INF")
    if not np.all(transitions[~mask] > NEG_INF / 2):
        raise ModelFormatError("unmasked transition cells fell to the mask sentinel")

    if embed_config.backend == "remote":
        embedder = RemoteEmbedder(embed_config)
    else:
        table = _take_tensor(
            tensors,
            "embed.table",
            tuple(tensors["embed.table"]["shape"]) if "embed.table" in tensors else (0, 0),
        )
        if table.shape[1] != dim:
            raise ModelFormatError(f"embedding table dim {table.shape[1]} != {dim}")
        if embed_config.backend == "hashed":
            if table.shape[0] != embed_config.vocab_buckets:
                raise ModelFormatError(
                    f"embedding table rows {table.shape[0]} != vocab_buckets "
                    f"{embed_config.vocab_buckets}"
                )
            embedder = HashedEmbedder(embed_config)
            embedder.table = table
        else:
            vocab = container.get("table_vocab")
            if not vocab:
                raise ModelFormatError("table backend model lacks its vocabulary")
            embedder = TableEmbedder(embed_config, {t: int(i) for t, i in vocab.items()}, table)

    return SequenceModel(
        embed_config=embed_config,
        schema=schema,
        embedder=embedder,
        gru=gru,
        w_emit=w_emit,
        b_emit=b_emit,
        transitions=transitions,
        use_crf=bool(container["use_crf"]),
        hard_bio_constraints=bool(container["hard_bio_constraints"]),
    )
