"""Versioned parameter checkpoints.

A checkpoint is an .npz of named float64 blocks plus one JSON metadata
entry (architecture dimensions and the symbol names the embedding rows
refer to). Loading validates metadata against the current run.
"""
from __future__ import annotations

import json
import os
from typing import Optional

import numpy as np

from .scorer import ParamSet, ScorerParams

FORMAT_VERSION = 1


class CheckpointMismatchError(ValueError):
    pass


def save_checkpoint(path: str, params: ParamSet, meta: Optional[dict] = None) -> None:
    meta = dict(meta or {})
    meta["format_version"] = FORMAT_VERSION
    meta["blocks"] = params.names()
    if isinstance(params, ScorerParams):
        meta.setdefault("scorer", params.meta())
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    arrays = {f"block::{name}": arr for name, arr in params.blocks().items()}
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"),
                                   dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointMismatchError(
                f"unsupported checkpoint format {meta.get('format_version')}")
        blocks = {name[len("block::"):]: np.array(data[name], dtype=np.float64)
                  for name in data.files if name.startswith("block::")}
    return blocks, meta


def load_scorer_params(path: str,
                       expected_symbols: Optional[list[str]] = None
                       ) -> tuple[ScorerParams, list[str]]:
    """Load scorer parameters; the current symbols must align id-for-id with
    a prefix of the saved table (or vice versa, when the checkpoint saw
    extra query symbols)."""
    blocks, meta = load_checkpoint(path)
    if "scorer" not in meta:
        raise CheckpointMismatchError("checkpoint does not hold scorer parameters")
    saved_symbols = list(meta.get("symbols") or [])
    if expected_symbols is not None and saved_symbols:
        overlap = min(len(saved_symbols), len(expected_symbols))
        if list(expected_symbols[:overlap]) != saved_symbols[:overlap]:
            raise CheckpointMismatchError(
                "checkpoint symbol table does not match the current program; "
                f"saved {len(saved_symbols)} symbols, current {len(expected_symbols)}"
            )
    params = ScorerParams.from_meta(meta["scorer"], blocks)
    extra = [n for n in meta["blocks"] if n not in params.names()]
    if extra:
        raise CheckpointMismatchError(f"checkpoint has unexpected blocks: {extra}")
    return params, saved_symbols


def load_paramset(path: str) -> tuple[ParamSet, dict]:
    blocks, meta = load_checkpoint(path)
    return ParamSet(blocks), meta
