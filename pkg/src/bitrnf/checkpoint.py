"""Versioned JSON checkpoints with lossless parameter storage.

Arrays are stored as base64 of their little-endian float64 bytes, and the
document is written with sorted keys and fixed separators, so
save -> load -> save reproduces the same bytes.
"""
import base64
from dataclasses import dataclass
import json

import numpy as np

from .autodiff import ParameterStore
from .config import Config, config_from_dict, config_to_dict

FORMAT = "bitrnf-checkpoint"
FORMAT_VERSION = 1


class CheckpointFormatError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: Config
    policy: ParameterStore
    value: ParameterStore
    rng_state: dict
    step: int = 0
    episode: int = 0


def _encode_store(store: ParameterStore):
    out = {}
    for name in store.names():
        arr = np.ascontiguousarray(store[name], dtype="<f8")
        out[name] = {"shape": list(arr.shape),
                     "data": base64.b64encode(arr.tobytes()).decode("ascii")}
    return out


def _decode_store(raw, label):
    if not isinstance(raw, dict):
        raise CheckpointFormatError(f"{label}: expected an object of arrays")
    arrays = {}
    for name, entry in raw.items():
        try:
            shape = tuple(int(s) for s in entry["shape"])
            buf = base64.b64decode(entry["data"], validate=True)
            arrays[name] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointFormatError(f"{label}.{name}: {exc}") from exc
    return ParameterStore(arrays)


def to_document(ckpt: Checkpoint):
    return {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "config": config_to_dict(ckpt.config),
        "step": int(ckpt.step),
        "episode": int(ckpt.episode),
        "rng": ckpt.rng_state,
        "policy": _encode_store(ckpt.policy),
        "value": _encode_store(ckpt.value),
    }


def dumps(ckpt: Checkpoint) -> bytes:
    doc = to_document(ckpt)
    return (json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def loads(data: bytes) -> Checkpoint:
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointFormatError(f"not a JSON checkpoint ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise CheckpointFormatError("missing or wrong 'format' tag")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(
            f"checkpoint format version {version!r} is not supported (expected {FORMAT_VERSION})")
    for key in ("config", "step", "episode", "rng", "policy", "value"):
        if key not in doc:
            raise CheckpointFormatError(f"missing field {key!r}")
    try:
        cfg = config_from_dict(doc["config"])
    except ValueError as exc:
        raise CheckpointFormatError(f"config: {exc}") from exc
    return Checkpoint(cfg, _decode_store(doc["policy"], "policy"),
                      _decode_store(doc["value"], "value"), doc["rng"],
                      int(doc["step"]), int(doc["episode"]))


def save_checkpoint(path, ckpt: Checkpoint):
    with open(path, "wb") as fh:
        fh.write(dumps(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return loads(fh.read())


def restore_rng(state):
    """A Generator positioned at a stored bit-generator state."""
    name = state.get("bit_generator") if isinstance(state, dict) else None
    if name is None or not hasattr(np.random, name):
        raise CheckpointFormatError(f"unknown bit generator {name!r}")
    bitgen = getattr(np.random, name)()
    bitgen.state = state
    return np.random.Generator(bitgen)
