"""Versioned model checkpoints: parameter arrays plus configuration.

Format: an uncompressed .npz archive holding every parameter array under
its dotted name, with a JSON metadata blob (format version, saved
configuration, parameter order) under ``__meta__``.  Round-trips are
lossless; loading a newer or unknown version fails loudly.
"""

from __future__ import annotations

import json

import numpy as np

from .autodiff import ParamStore
from .errors import DataError

CHECKPOINT_VERSION = 1


def save_checkpoint(path, params, config=None):
    """Write a ParamStore (and an arbitrary JSON-serializable config)."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "order": params.names(),
        "config": config if config is not None else {},
    }
    arrays = {name: params[name] for name in params.names()}
    np.savez(
        path,
        __meta__=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
        **arrays,
    )


def load_checkpoint(path):
    """Read back (ParamStore, config) from `save_checkpoint` output."""
    with np.load(path, allow_pickle=False) as archive:
        if "__meta__" not in archive:
            raise DataError(f"'{path}' is not a model checkpoint (missing metadata)")
        meta = json.loads(bytes(archive["__meta__"]).decode("utf-8"))
        version = meta.get("version")
        if version != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {version!r}")
        params = ParamStore({name: archive[name] for name in meta["order"]})
    return params, meta.get("config", {})
