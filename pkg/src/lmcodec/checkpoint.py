"""Checkpoint containers.

Both formats are ``torch.save`` dictionaries with a ``format`` tag and
``version``, weights grouped by module name:

* codec: ``{"format": "lmcodec-codec", "profile", "groups": {name: state_dict},
  "completed_stages", "meta"}``. Codebook EMA state (entries, cluster sizes,
  embedding sums) lives inside the ``semantic_vq``/``pitch_vq`` groups.
* TTR: ``{"format": "lmcodec-ttr", "groups": {"summarizer", "aggregator"},
  "stack_config", "config", "step", "history"}``.
"""

from __future__ import annotations

from pathlib import Path

import torch

from lmcodec.codec import Codec
from lmcodec.errors import CheckpointError
from lmcodec.losses import TTRStack
from lmcodec.profiles import CodecProfile

CHECKPOINT_VERSION = 1


def _load(path, fmt: str) -> dict:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no checkpoint at {path}")
    try:
        blob = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:  # torch raises a variety of unpickling errors
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("format") != fmt:
        raise CheckpointError(f"{path} is not a {fmt} checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {blob.get('version')}")
    return blob


def codec_state(codec: Codec, completed_stages=(), meta: dict | None = None) -> dict:
    groups = {name: {k: v.detach().clone() for k, v in m.state_dict().items()} for name, m in codec.groups().items()}
    groups["pitch_stats"] = {"log_mean": codec.pitch_log_mean.clone(), "log_std": codec.pitch_log_std.clone()}
    return {
        "format": "lmcodec-codec",
        "version": CHECKPOINT_VERSION,
        "profile": codec.profile.to_dict(),
        "groups": groups,
        "completed_stages": sorted(set(completed_stages)),
        "meta": dict(meta or {}),
    }


def restore_codec(blob: dict, codec: Codec | None = None) -> Codec:
    if codec is None:
        codec = Codec(CodecProfile.from_dict(blob["profile"]))
    for name, module in codec.groups().items():
        module.load_state_dict(blob["groups"][name])
    stats = blob["groups"]["pitch_stats"]
    with torch.no_grad():
        codec.pitch_log_mean.copy_(stats["log_mean"])
        codec.pitch_log_std.copy_(stats["log_std"])
    return codec


def save_codec(path, codec: Codec, completed_stages=(), meta: dict | None = None) -> None:
    torch.save(codec_state(codec, completed_stages, meta), path)


def load_codec(path) -> tuple[Codec, dict]:
    """Return the codec and the raw container (for stages and metadata)."""
    blob = _load(path, "lmcodec-codec")
    return restore_codec(blob), blob


def ttr_state(stack: TTRStack, config: dict | None = None, step: int = 0, history=None) -> dict:
    return {
        "format": "lmcodec-ttr",
        "version": CHECKPOINT_VERSION,
        "groups": {
            "summarizer": {k: v.detach().clone() for k, v in stack.summarizer.state_dict().items()},
            "aggregator": {k: v.detach().clone() for k, v in stack.aggregator.state_dict().items()},
        },
        "stack_config": dict(stack.config),
        "config": dict(config or {}),
        "step": int(step),
        "history": list(history or []),
    }


def restore_ttr(blob: dict) -> TTRStack:
    stack = TTRStack(**blob["stack_config"])
    stack.summarizer.load_state_dict(blob["groups"]["summarizer"])
    stack.aggregator.load_state_dict(blob["groups"]["aggregator"])
    return stack


def save_ttr(path, blob: dict) -> None:
    torch.save(blob, path)


def load_ttr(path) -> dict:
    return _load(path, "lmcodec-ttr")
