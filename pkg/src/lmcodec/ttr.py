"""Pretraining of the TTR summarizer and aggregator on clean speech-text pairs."""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from lmcodec.audio import AudioClip
from lmcodec.checkpoint import restore_ttr, save_ttr, ttr_state
from lmcodec.errors import AlignmentError, CorpusError
from lmcodec.frontend import SpeechEncoder, TextLM
from lmcodec.losses import TTRStack, ttr_loss

logger = logging.getLogger(__name__)


@dataclass
class TtrPretrainConfig:
    learning_rate: float = 1e-4
    betas: tuple = (0.8, 0.99)
    lr_decay: float = 0.999
    max_steps: int = 1_000_000
    validate_every: int = 1000
    grad_clip: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        self.betas = tuple(self.betas)


@dataclass
class TtrItem:
    clip: AudioClip
    alignments: list
    script: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.alignments:
            raise AlignmentError("TTR corpus item has no alignments")
        if not self.script:
            self.script = [a.token for a in self.alignments]


@dataclass
class TtrResult:
    checkpoint: dict
    train_losses: list
    history: list

    @property
    def stack(self) -> TTRStack:
        return restore_ttr(self.checkpoint)


def _prepare(items, speech_lm: SpeechEncoder, text_lm: TextLM):
    prepared = []
    with torch.no_grad():
        for item in items:
            if not item.alignments:
                raise AlignmentError("TTR corpus item has no alignments")
            wave = torch.as_tensor(item.clip.samples, dtype=torch.float32)
            prepared.append((speech_lm(wave), item.alignments, text_lm(list(item.script))))
    return prepared


def _mean_loss(stack: TTRStack, prepared, frame_rate: float) -> float:
    with torch.no_grad():
        losses = [float(ttr_loss(stack(f, frame_rate, al), t)) for f, al, t in prepared]
    return float(np.mean(losses))


def validate_ttr(stack, items, speech_lm: SpeechEncoder, text_lm: TextLM) -> float:
    """Mean TTR loss over ``items``; accepts a stack or a checkpoint dict."""
    if not items:
        raise CorpusError("empty validation set")
    if isinstance(stack, dict):
        stack = restore_ttr(stack)
    was_training = stack.training
    stack.eval()
    try:
        return _mean_loss(stack, _prepare(items, speech_lm, text_lm), speech_lm.frame_rate)
    finally:
        stack.train(was_training)


def pretrain_ttr(
    corpus: list[TtrItem],
    config: TtrPretrainConfig,
    speech_lm: SpeechEncoder,
    text_lm: TextLM,
    stack: TTRStack | None = None,
    val_set: list[TtrItem] | None = None,
    checkpoint_dir=None,
    log=None,
) -> TtrResult:
    """Train summarizer and aggregator to minimize the TTR loss on clean speech.

    One epoch is a pass over ``corpus`` (batch size 1, order reshuffled per
    epoch from ``config.seed``); the learning rate decays by
    ``config.lr_decay`` after each epoch. Validation runs every
    ``validate_every`` steps and after the last step, on ``val_set`` or on the
    training corpus when none is given. The lowest-validation checkpoint is
    returned, the initialization included as a candidate.
    """
    if not corpus:
        raise CorpusError("empty TTR corpus")
    torch.manual_seed(config.seed)
    if stack is None:
        raise ValueError("pretrain_ttr needs an initialized TTRStack")
    rate = speech_lm.frame_rate
    train = _prepare(corpus, speech_lm, text_lm)
    val = _prepare(val_set, speech_lm, text_lm) if val_set else train
    cfg = asdict(config)

    opt = torch.optim.Adam(stack.parameters(), lr=config.learning_rate, betas=config.betas)
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=config.lr_decay)
    rng = np.random.default_rng(config.seed)
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    stack.eval()
    best_val = _mean_loss(stack, val, rate)
    history = [{"step": 0, "val_loss": best_val}]
    best = ttr_state(stack, cfg, 0, history)
    train_losses = []
    order = rng.permutation(len(train))
    pos = 0
    for step in range(1, config.max_steps + 1):
        stack.train()
        feats, al, t = train[order[pos]]
        loss = ttr_loss(stack(feats, rate, al), t)
        opt.zero_grad()
        loss.backward()
        if config.grad_clip:
            torch.nn.utils.clip_grad_norm_(stack.parameters(), config.grad_clip)
        opt.step()
        train_losses.append(loss.item())
        if log is not None:
            log({"step": step, "loss": train_losses[-1], "lr": opt.param_groups[0]["lr"]})
        pos += 1
        if pos == len(train):
            sched.step()
            order = rng.permutation(len(train))
            pos = 0
        if step % config.validate_every == 0 or step == config.max_steps:
            stack.eval()
            v = _mean_loss(stack, val, rate)
            history.append({"step": step, "val_loss": v})
            logger.info("ttr step %d val %.5f", step, v)
            state = ttr_state(stack, cfg, step, history)
            if ckpt_dir:
                save_ttr(ckpt_dir / f"ttr_step{step}.pt", state)
            if v < best_val:
                best_val, best = v, state
    best = copy.deepcopy(best)
    best["history"] = list(history)
    if ckpt_dir:
        save_ttr(ckpt_dir / "ttr_best.pt", best)
    return TtrResult(best, train_losses, history)
