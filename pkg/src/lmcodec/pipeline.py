"""File-level workflows shared by the CLI and the HTTP service."""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import torch

from lmcodec.audio import load_audio, save_audio
from lmcodec.checkpoint import load_codec, load_ttr, save_ttr
from lmcodec.codec import pack_bitstream, unpack_bitstream
from lmcodec.config import RunConfig
from lmcodec.data import Utterance, build_segments, load_utterances, split_corpus
from lmcodec.errors import ConfigError, CorpusError, EvaluationError
from lmcodec.evaluation import (
    AdapterTranscriber,
    ExemplarTranscriber,
    build_report,
    evaluate_codec,
    load_metric_adapters,
)
from lmcodec.losses import TTRStack
from lmcodec.training import run_stage
from lmcodec.ttr import TtrItem, pretrain_ttr

logger = logging.getLogger(__name__)


def load_corpus(cfg: RunConfig, manifest=None) -> dict[str, list[Utterance]]:
    """Utterances of the manifest split into train/val/test by id prefix."""
    manifest = manifest or cfg.data.manifest
    if not manifest:
        raise ConfigError("no manifest: pass --manifest or set data.manifest")
    utts = load_utterances(manifest, cfg.codec_profile().sample_rate)
    parts = split_corpus([u.id for u in utts], cfg.data.test_prefixes, cfg.data.val_prefixes)
    by_id = {u.id: u for u in utts}
    return {k: [by_id[i] for i in ids] for k, ids in parts.items()}


def _segments(cfg: RunConfig, utts):
    lo, hi = cfg.segment_bounds()
    return build_segments(utts, lo, hi) if utts else []


def train_stage(
    cfg: RunConfig,
    stage: int,
    out,
    variant: str | None = None,
    init=None,
    ttr=None,
    manifest=None,
    steps: int | None = None,
    log_path=None,
) -> dict:
    """Train one stage from files and save the best checkpoint to ``out``."""
    corpus = load_corpus(cfg, manifest)
    train = _segments(cfg, corpus["train"])
    if not train:
        raise CorpusError("training split is empty")
    val = _segments(cfg, corpus["val"]) or None
    init_blob = load_codec(init)[1] if init else None
    ttr_blob = load_ttr(ttr) if ttr else None
    profile = cfg.codec_profile()
    providers = cfg.build_providers(profile)
    sc = cfg.stage_config(stage, variant, steps)
    t0 = time.perf_counter()
    result = run_stage(sc, train, providers, profile, init_blob, val, ttr_blob, log_path)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    result.checkpoint["meta"]["config"] = cfg.to_dict()
    torch.save(result.checkpoint, out)
    return {
        "checkpoint": str(out),
        "stage": stage,
        "variant": sc.variant,
        "steps": len(result.log),
        "best_step": result.best_step,
        "stopped_early": result.stopped_early,
        "final_total": result.log[-1]["total"] if result.log else None,
        "seconds": round(time.perf_counter() - t0, 2),
    }


def ttr_stack_for(profile, providers) -> TTRStack:
    return TTRStack(providers.ttr_speech.dim, profile.ttr_dim, profile.ttr_ff, profile.ttr_layers, profile.ttr_heads)


def pretrain_ttr_files(cfg: RunConfig, out, manifest=None, steps: int | None = None, log_path=None) -> dict:
    corpus = load_corpus(cfg, manifest)
    if not corpus["train"]:
        raise CorpusError("training split is empty")
    items = [TtrItem(u.clip, u.alignments) for u in corpus["train"]]
    val = [TtrItem(u.clip, u.alignments) for u in corpus["val"]] or None
    profile = cfg.codec_profile()
    providers = cfg.build_providers(profile)
    torch.manual_seed(cfg.seed)
    stack = ttr_stack_for(profile, providers)
    sink = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        log = (lambda e: sink.write(json.dumps(e) + "\n")) if sink else None
        res = pretrain_ttr(items, cfg.ttr_config(steps), providers.ttr_speech, providers.text_lm, stack, val, log=log)
    finally:
        if sink:
            sink.close()
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_ttr(out, res.checkpoint)
    return {
        "checkpoint": str(out),
        "steps": len(res.train_losses),
        "best_step": res.checkpoint["step"],
        "initial_val": res.history[0]["val_loss"],
        "best_val": min(h["val_loss"] for h in res.history),
    }


def encode_file(cfg: RunConfig, checkpoint, wav, bitstream) -> dict:
    codec, _ = load_codec(checkpoint)
    clip = load_audio(wav, codec.profile.sample_rate)
    cs = codec.encode(clip, cfg.build_providers(codec.profile))
    data = pack_bitstream(cs)
    Path(bitstream).write_bytes(data)
    return {"bytes": len(data), "semantic_codes": len(cs.semantic_indices), "pitch_codes": len(cs.pitch_indices)}


def decode_file(checkpoint, bitstream, wav) -> dict:
    codec, _ = load_codec(checkpoint)
    cs = unpack_bitstream(Path(bitstream).read_bytes())
    clip = codec.decode(cs)
    save_audio(clip, wav)
    return {"samples": len(clip), "sample_rate": clip.sample_rate, "duration_s": clip.duration_s}


def transcribers_for(names, cfg: RunConfig, test_set, providers=None):
    out = []
    for name in names:
        if name == "exemplar":
            out.append(ExemplarTranscriber.from_utterances(test_set))
        elif name == "providers":
            providers = providers or cfg.build_providers()
            out.append(AdapterTranscriber(providers.asr))
        else:
            raise ConfigError(f"unknown ASR adapter {name!r}; choose exemplar or providers")
    return out


def evaluate_files(cfg: RunConfig, codecs: list[tuple[str, str]], manifest=None, asr=("exemplar",), reference: bool = True, split: str = "test"):
    """Report over ``codecs`` given as (variant, checkpoint path) pairs."""
    corpus = load_corpus(cfg, manifest)
    test_set = corpus[split]
    if not test_set:
        raise EvaluationError(f"{split} split is empty")
    providers = cfg.build_providers()
    adapters = transcribers_for(asr, cfg, test_set, providers)
    metrics = load_metric_adapters()
    rows = []
    for variant, path in codecs:
        codec, _ = load_codec(path)
        rows.append(evaluate_codec(codec, test_set, adapters, metrics, providers, variant.upper(), cfg.seed))
    if reference:
        rows.append(evaluate_codec(None, test_set, adapters, metrics, seed=cfg.seed))
    return build_report(rows, adapters, metrics, seed=cfg.seed, split=split, n_utterances=len(test_set))
