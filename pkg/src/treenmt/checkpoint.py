"""Binary checkpoint container.

Layout: an 8-byte little-endian header length, a JSON header, then the
raw array blobs back to back. The header records the format version,
the model configuration (so the model can be rebuilt without outside
context), the epoch counter, optimizer hyperparameters when optimizer
state is included, and one entry per stored array giving name, dtype,
shape, and byte offset into the blob section.

Arrays are stored little-endian. The default float64 mode round-trips
parameters bit-exactly; float32 mode halves the file size at the cost
of precision.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict

import numpy as np

from .model import Model, ModelConfig
from .optim import AdaDelta

FORMAT_VERSION = "treenmt-ckpt-1"

_HEADER_LEN = struct.Struct("<Q")
_DTYPES = {"float64": "<f8", "float32": "<f4"}


class CheckpointError(RuntimeError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class MissingParameterError(CheckpointError):
    pass


class NoOptimizerStateError(CheckpointError):
    """Raised when resuming training from an inference-only checkpoint."""


def _entry_blobs(named_arrays, dtype):
    entries = []
    blobs = []
    offset = 0
    for name, arr in named_arrays:
        data = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        entries.append({
            "name": name,
            "dtype": dtype,
            "shape": list(np.shape(arr)),
            "offset": offset,
            "nbytes": len(data),
        })
        blobs.append(data)
        offset += len(data)
    return entries, blobs


def save_checkpoint(path, model: Model, optimizer: AdaDelta = None,
                    epoch=0, float32=False):
    """Write model parameters (and optionally optimizer state) to disk."""
    dtype = _DTYPES["float32" if float32 else "float64"]
    named = [(name, p.value) for name, p in sorted(model.params.items())]
    if optimizer is not None:
        named += sorted(optimizer.state_arrays().items())
    entries, blobs = _entry_blobs(named, dtype)
    header = {
        "version": FORMAT_VERSION,
        "config": asdict(model.config),
        "src_vocab_size": model.src_vocab_size,
        "tgt_vocab_size": model.tgt_vocab_size,
        "seed": model.seed,
        "epoch": int(epoch),
        "optimizer": None if optimizer is None else {
            "rho": optimizer.rho, "eps": optimizer.eps,
        },
        "entries": entries,
    }
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER_LEN.pack(len(payload)))
        fh.write(payload)
        for blob in blobs:
            fh.write(blob)


def _read_header(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER_LEN.size:
        raise CorruptCheckpointError(f"{path}: truncated header length")
    (header_len,) = _HEADER_LEN.unpack_from(raw)
    body_start = _HEADER_LEN.size + header_len
    if len(raw) < body_start:
        raise CorruptCheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[_HEADER_LEN.size:body_start])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header: {exc}") \
            from exc
    version = header.get("version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path}: format {version!r}, expected {FORMAT_VERSION!r}")
    return header, raw[body_start:]


def _extract_arrays(header, body, path):
    arrays = {}
    for entry in header["entries"]:
        start = entry["offset"]
        end = start + entry["nbytes"]
        if end > len(body):
            raise CorruptCheckpointError(
                f"{path}: blob for {entry['name']!r} extends past end of"
                " file")
        arr = np.frombuffer(body[start:end], dtype=entry["dtype"])
        shape = tuple(entry["shape"])
        if arr.size != int(np.prod(shape, dtype=np.int64)):
            raise CorruptCheckpointError(
                f"{path}: blob size for {entry['name']!r} does not match"
                f" shape {shape}")
        arrays[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return arrays


def load_checkpoint(path, require_optimizer=False):
    """Rebuild the model (and optimizer state, when present) from a file.

    Returns ``(model, optimizer_or_None, epoch)``. With
    ``require_optimizer=True`` a parameters-only checkpoint is rejected,
    which is how resumed training refuses inference-only files.
    """
    header, body = _read_header(path)
    arrays = _extract_arrays(header, body, path)
    config = ModelConfig(**header["config"])
    model = Model(config, header["src_vocab_size"],
                  header["tgt_vocab_size"], seed=header.get("seed", 0))
    restore_parameters(model, arrays, path)

    opt_meta = header.get("optimizer")
    if require_optimizer and opt_meta is None:
        raise NoOptimizerStateError(
            f"{path}: checkpoint has no optimizer state; it can be used"
            " for translation but not to resume training")
    optimizer = None
    if opt_meta is not None:
        optimizer = AdaDelta(model.params, rho=opt_meta["rho"],
                             eps=opt_meta["eps"])
        state = {k: v for k, v in arrays.items() if k.startswith("opt.")}
        optimizer.load_state_arrays(state)
    return model, optimizer, header.get("epoch", 0)


def restore_parameters(model: Model, arrays, source="checkpoint"):
    """Copy stored arrays into the model, demanding full coverage."""
    for name, param in model.params.items():
        if name not in arrays:
            raise MissingParameterError(f"{source}: missing {name!r}")
        value = arrays[name]
        if value.shape != param.value.shape:
            raise MissingParameterError(
                f"{source}: {name!r} has shape {value.shape}, model expects"
                f" {param.value.shape}")
        param.value = value.copy()
    unexpected = [n for n in arrays
                  if not n.startswith("opt.") and n not in model.params]
    if unexpected:
        raise MissingParameterError(
            f"{source}: unexpected parameters {sorted(unexpected)}")
