"""Three-stage codec training.

Stage 1 trains both encoder branches, their quantizers and the feature
decoders to reconstruct frozen speech features and pitch. Stage 2 trains the
vocoder and discriminators on frozen codes. Stage 3 unfreezes the semantic
branch and adds exactly one of the ASR, TTR or semantic-distillation losses
to the stage-2 objective; the pitch branch stays frozen.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from lmcodec.checkpoint import codec_state, restore_codec, restore_ttr
from lmcodec.codec import CODEC_GROUPS, Codec
from lmcodec.codec.discriminators import (
    discriminator_loss,
    feature_matching_loss,
    generator_adversarial_loss,
)
from lmcodec.codec.model import crop_pair, mel_l1
from lmcodec.data import TrainingSegment
from lmcodec.errors import StageError
from lmcodec.frontend import Providers, asr_greedy_transcribe
from lmcodec.losses import TTRStack, asr_loss, sd_loss, ttr_codec_loss

logger = logging.getLogger(__name__)

MODULE_UNIVERSE = CODEC_GROUPS + ("ttr_stack",)
VARIANTS = ("asr", "ttr", "sd")

# One place to edit if the freeze schedule is reinterpreted.
_STAGE_TABLE = {
    1: {
        "trainable": {"pitch_encoder", "pitch_vq", "semantic_encoder", "semantic_vq", "feature_decoders"},
        "frozen": set(),
        "losses": ("semantic_recon", "pitch_recon", "commitment"),
    },
    2: {
        "trainable": {"vocoder", "discriminators"},
        "frozen": {"pitch_encoder", "pitch_vq", "semantic_encoder", "semantic_vq"},
        "losses": ("mel_l1", "adversarial", "feature_matching"),
    },
    3: {
        "trainable": {"semantic_encoder", "semantic_vq", "vocoder", "discriminators"},
        "frozen": {"pitch_encoder", "pitch_vq"},
        "losses": ("mel_l1", "adversarial", "feature_matching", "commitment"),
    },
}
# modules the stage-3 variant consults without training
_VARIANT_FROZEN = {"asr": set(), "ttr": {"ttr_stack"}, "sd": {"feature_decoders"}}


@dataclass(frozen=True)
class StagePlan:
    stage_id: int
    variant: str | None
    trainable: frozenset
    frozen: frozenset
    idle: frozenset
    losses: tuple

    def role(self, module: str) -> str:
        for role in ("trainable", "frozen", "idle"):
            if module in getattr(self, role):
                return role
        raise KeyError(module)


def trainable_set(stage_id: int, variant: str | None = None) -> StagePlan:
    """Trainable / frozen / idle partition of the module universe for a stage."""
    if stage_id not in _STAGE_TABLE:
        raise StageError(f"invalid stage {stage_id!r}; expected 1, 2 or 3")
    if stage_id == 3:
        if variant is None:
            raise StageError("stage 3 needs a variant: asr, ttr or sd")
        variant = variant.lower()
        if variant not in VARIANTS:
            raise StageError(f"unknown stage-3 variant {variant!r}")
    else:
        variant = None
    row = _STAGE_TABLE[stage_id]
    trainable = set(row["trainable"])
    frozen = set(row["frozen"])
    losses = row["losses"]
    if stage_id == 3:
        frozen |= _VARIANT_FROZEN[variant]
        losses = losses + (variant,)
    idle = set(MODULE_UNIVERSE) - trainable - frozen
    return StagePlan(stage_id, variant, frozenset(trainable), frozenset(frozen), frozenset(idle), losses)


@dataclass
class OptimizerConfig:
    learning_rate: float = 2e-4
    weight_decay: float = 0.01
    betas: tuple = (0.8, 0.99)
    lr_decay: float = 0.999

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        self.betas = tuple(self.betas)


def lr_at(epoch: int, config: OptimizerConfig) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return config.learning_rate * config.lr_decay**epoch


@dataclass
class LossWeights:
    mel_l1: float = 45.0
    feature_matching: float = 2.0
    adversarial: float = 1.0
    commitment: float = 0.25
    lm: float = 1.0
    semantic_recon: float = 1.0
    pitch_recon: float = 1.0


@dataclass
class EarlyStopState:
    """Stop once ``patience_steps`` pass without a strictly better metric."""

    patience_steps: int = 100_000
    validate_every: int = 1000
    best_metric: float = math.inf
    best_step: int = 0

    def update(self, step: int, metric: float) -> bool:
        """Record a validation result; return True when training should stop."""
        if metric < self.best_metric:
            self.best_metric, self.best_step = float(metric), int(step)
        return step - self.best_step >= self.patience_steps

    @property
    def stop_step(self) -> int:
        return self.best_step + self.patience_steps


def simulate_early_stop(metrics: dict[int, float], state: EarlyStopState, max_step: int) -> int | None:
    """Feed a ``{step: metric}`` series at the validation cadence; return the stop step."""
    for step in range(state.validate_every, max_step + 1, state.validate_every):
        if state.update(step, metrics.get(step, state.best_metric)):
            return step
    return None


@dataclass
class StageConfig:
    stage: int
    variant: str | None = None
    max_steps: int = 1_000_000
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    validate_every: int = 1000
    patience_steps: int = 100_000
    seed: int = 0
    asr_targets: str = "greedy"
    crop_frames: int | None = None

    def __post_init__(self):
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.asr_targets not in ("greedy", "ground_truth"):
            raise ValueError("asr_targets must be 'greedy' or 'ground_truth'")
        self.plan = trainable_set(self.stage, self.variant)
        self.variant = self.plan.variant

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("plan", None)
        return d


@dataclass
class Batch:
    """One prepared training segment (batch size 1)."""

    id: str
    wave: torch.Tensor  # (samples,)
    features: torch.Tensor  # (T, F)
    f0: torch.Tensor  # (T,)
    alignments: list
    script: list
    text: str = ""
    asr_targets: list | None = None


def prepare_batches(segments: list[TrainingSegment], providers: Providers, codec: Codec, asr_targets: str | None = None) -> list[Batch]:
    """Extract frozen features and pitch, and trim audio to whole feature frames.

    With ``asr_targets="greedy"`` the ASR transcript of each clean segment is
    computed once here, so targets stay fixed for the whole run.
    """
    hop = codec.profile.feature_hop
    batches = []
    with torch.no_grad():
        for seg in segments:
            wave = torch.as_tensor(seg.clip.samples, dtype=torch.float32)
            feats = providers.feature(wave)
            n = feats.shape[0]
            f0 = providers.pitch(seg.clip.samples)[:n]
            targets = None
            if asr_targets == "greedy":
                targets = list(asr_greedy_transcribe(providers.asr, wave[: n * hop]).tokens)
            elif asr_targets == "ground_truth":
                targets = providers.asr.tokenize(seg.text or " ".join(seg.script))
            batches.append(
                Batch(
                    id=seg.utterance_ids[0] if seg.utterance_ids else seg.source_text_id,
                    wave=wave[: n * hop],
                    features=feats,
                    f0=torch.as_tensor(f0, dtype=torch.float32),
                    alignments=list(seg.alignments),
                    script=seg.script,
                    text=seg.text,
                    asr_targets=targets,
                )
            )
    return batches


def _set_trainable(codec: Codec, plan: StagePlan, ttr_stack: TTRStack | None):
    for name, module in codec.groups().items():
        module.requires_grad_(name in plan.trainable)
    if ttr_stack is not None:
        ttr_stack.requires_grad_(False)
        ttr_stack.eval()


@dataclass
class StepResult:
    total: torch.Tensor
    terms: dict
    out: object = None
    x: torch.Tensor | None = None
    x_hat: torch.Tensor | None = None


def stage_loss(
    plan: StagePlan,
    batch: Batch,
    codec: Codec,
    providers: Providers | None = None,
    ttr_stack: TTRStack | None = None,
    weights: LossWeights | None = None,
    crop: tuple[int, int] | None = None,
) -> StepResult:
    """Weighted stage objective and its per-term breakdown (weighted terms sum to ``total``).

    ``crop`` selects a window of semantic frames (start, length) for
    vocoder-only training in stage 2.
    """
    w = weights or LossWeights()
    feats = batch.features[None]
    f0 = batch.f0[None]
    sem_trainable = "semantic_encoder" in plan.trainable
    pitch_trainable = "pitch_encoder" in plan.trainable
    with torch.set_grad_enabled(sem_trainable or pitch_trainable):
        out = codec.encode_latents(feats, f0)
    terms = {}
    if plan.stage_id == 1:
        n = feats.shape[1]
        sem_rec = codec.feature_decoders["semantic"](out.q_semantic, n)
        pitch_rec = codec.feature_decoders["pitch"](out.q_pitch, n)
        terms["semantic_recon"] = w.semantic_recon * sd_loss(feats, sem_rec)
        terms["pitch_recon"] = w.pitch_recon * F.mse_loss(pitch_rec, codec.pitch_targets(f0))
        terms["commitment"] = w.commitment * (out.commit_semantic + out.commit_pitch)
        total = sum(terms.values())
        return StepResult(total, terms, out)

    q_sem = out.q_semantic if sem_trainable else out.q_semantic.detach()
    q_p = out.q_pitch.detach()
    x = batch.wave[None]
    if crop is not None:
        start, length = crop
        hop = codec.profile.samples_per_code
        ratio = codec.profile.pitch_decimation // codec.profile.semantic_decimation
        q_sem = q_sem[..., start : start + length]
        q_p = q_p[..., start // ratio : (start + length + ratio - 1) // ratio]
        x = x[..., start * hop : (start + length) * hop]
    x_hat = codec.synthesize(q_sem, q_p)
    x_c, x_hat_c = crop_pair(x, x_hat, x_hat.shape[-1])
    real = codec.discriminators(x_c.unsqueeze(1))
    fake = codec.discriminators(x_hat_c.unsqueeze(1))
    terms["mel_l1"] = w.mel_l1 * mel_l1(codec, x_c, x_hat_c)
    terms["adversarial"] = w.adversarial * generator_adversarial_loss(fake)
    terms["feature_matching"] = w.feature_matching * feature_matching_loss(real, fake)
    if plan.stage_id == 3:
        terms["commitment"] = w.commitment * out.commit_semantic
        wave = x_hat_c[0]
        if plan.variant == "asr":
            if not batch.asr_targets:
                raise StageError(f"segment {batch.id} has no ASR targets")
            terms["asr"] = w.lm * asr_loss(providers.asr, wave, batch.asr_targets)
        elif plan.variant == "ttr":
            if ttr_stack is None:
                raise StageError("TTR variant needs a pretrained TTR stack")
            terms["ttr"] = w.lm * ttr_codec_loss(
                wave, batch.alignments, batch.script, ttr_stack, providers.ttr_speech, providers.text_lm
            )
        elif plan.variant == "sd":
            rec = codec.feature_decoders["semantic"](out.q_semantic, feats.shape[1])
            terms["sd"] = w.lm * sd_loss(feats, rec)
    total = sum(terms.values())
    return StepResult(total, terms, out, x_c, x_hat_c)


class StageRunner:
    """Owns all mutable training state for one stage; resumable via ``state_dict``."""

    def __init__(
        self,
        config: StageConfig,
        codec: Codec,
        train: list[Batch],
        val: list[Batch] | None = None,
        providers: Providers | None = None,
        ttr_stack: TTRStack | None = None,
    ):
        if not train:
            raise StageError("no training segments")
        self.config = config
        self.plan = config.plan
        self.codec = codec
        self.train = train
        self.val = val or train
        self.providers = providers
        self.ttr_stack = ttr_stack
        if self.plan.variant in ("asr", "ttr") and providers is None:
            raise StageError(f"{self.plan.variant} variant needs providers")
        if self.plan.variant == "ttr" and ttr_stack is None:
            raise StageError("TTR variant needs a pretrained TTR checkpoint")
        _set_trainable(codec, self.plan, ttr_stack)

        oc = config.optimizer
        gen_params = [
            p for name in sorted(self.plan.trainable - {"discriminators"}) for p in codec.groups()[name].parameters()
        ]
        self.opt_g = torch.optim.AdamW(gen_params, lr=oc.learning_rate, betas=oc.betas, weight_decay=oc.weight_decay)
        self.sched_g = torch.optim.lr_scheduler.ExponentialLR(self.opt_g, oc.lr_decay)
        self.adversarial = "discriminators" in self.plan.trainable
        if self.adversarial:
            self.opt_d = torch.optim.AdamW(
                codec.discriminators.parameters(), lr=oc.learning_rate, betas=oc.betas, weight_decay=oc.weight_decay
            )
            self.sched_d = torch.optim.lr_scheduler.ExponentialLR(self.opt_d, oc.lr_decay)
        self.generator = torch.Generator().manual_seed(config.seed)
        self.rng = np.random.default_rng(config.seed)
        self.early = EarlyStopState(config.patience_steps, config.validate_every)
        self.step_count = 0
        self.epoch = 0
        self.order = self.rng.permutation(len(train))
        self.pos = 0
        self.log: list[dict] = []
        self.best_state: dict | None = None
        self.stopped_early = False

    # per-step

    def _crop(self, batch: Batch):
        k = self.config.crop_frames
        if self.plan.stage_id != 2 or not k:
            return None
        ratio = self.codec.profile.pitch_decimation // self.codec.profile.semantic_decimation
        n_sem = math.ceil(batch.features.shape[0] / self.codec.profile.semantic_decimation)
        n_full = batch.wave.shape[0] // self.codec.profile.samples_per_code
        if n_full <= k:
            return None
        start = int(torch.randint(0, (n_full - k) // ratio + 1, (1,), generator=self.generator)) * ratio
        return (start, min(k, n_sem - start))

    def train_step(self) -> dict:
        batch = self.train[self.order[self.pos]]
        crop = self._crop(batch)
        res = stage_loss(self.plan, batch, self.codec, self.providers, self.ttr_stack, self.config.weights, crop)
        entry = {"step": self.step_count + 1}
        if self.adversarial:
            self.codec.discriminators.requires_grad_(True)
            real = self.codec.discriminators(res.x.unsqueeze(1))
            fake = self.codec.discriminators(res.x_hat.detach().unsqueeze(1))
            d_loss = discriminator_loss(real, fake)
            self.opt_d.zero_grad()
            d_loss.backward()
            self.opt_d.step()
            entry["discriminator"] = d_loss.item()
            # generator terms must not reach discriminator weights
            self.codec.discriminators.requires_grad_(False)
            res = stage_loss(self.plan, batch, self.codec, self.providers, self.ttr_stack, self.config.weights, crop)
        self.opt_g.zero_grad()
        res.total.backward()
        self.opt_g.step()
        if self.adversarial:
            self.codec.discriminators.requires_grad_(True)
        self._codebook_updates(res.out)
        entry["total"] = res.total.item()
        entry.update({k: v.item() for k, v in res.terms.items()})
        entry["lr"] = self.opt_g.param_groups[0]["lr"]
        self.step_count += 1
        self.pos += 1
        if self.pos == len(self.train):
            self._end_epoch()
        return entry

    def _codebook_updates(self, out):
        if "semantic_vq" in self.plan.trainable:
            self.codec.semantic_vq.update(out.flat_semantic, out.idx_semantic, self.generator)
        if "pitch_vq" in self.plan.trainable:
            self.codec.pitch_vq.update(out.flat_pitch, out.idx_pitch, self.generator)

    def _end_epoch(self):
        self.epoch += 1
        self.sched_g.step()
        if self.adversarial:
            self.sched_d.step()
        self.order = self.rng.permutation(len(self.train))
        self.pos = 0

    @torch.no_grad()
    def validate(self) -> float:
        """Stage 1: mean validation stage-1 loss. Stages 2 and 3: mean mel L1."""
        values = []
        for batch in self.val:
            if self.plan.stage_id == 1:
                values.append(stage_loss(self.plan, batch, self.codec, weights=self.config.weights).total.item())
            else:
                out = self.codec.encode_latents(batch.features[None], batch.f0[None])
                x_hat = self.codec.synthesize(out.q_semantic, out.q_pitch)
                x, x_hat = crop_pair(batch.wave[None], x_hat, x_hat.shape[-1])
                values.append(mel_l1(self.codec, x, x_hat).item())
        return float(np.mean(values))

    def run(self, max_steps: int | None = None, log_path=None, completed_stages=()) -> "StageResult":
        """Train until ``max_steps`` or early stop; return the best-validation codec."""
        max_steps = self.config.max_steps if max_steps is None else max_steps
        sink = open(log_path, "a", encoding="utf-8") if log_path else None
        done = sorted(set(completed_stages) | {self.plan.stage_id})
        try:
            while self.step_count < max_steps:
                entry = self.train_step()
                if self.step_count % self.config.validate_every == 0 or self.step_count == max_steps:
                    metric = self.validate()
                    entry["val"] = metric
                    improved = metric < self.early.best_metric
                    stop = self.early.update(self.step_count, metric)
                    if improved or self.best_state is None:
                        self.best_state = codec_state(self.codec, done, {"step": self.step_count, "val": metric})
                    if stop:
                        self.stopped_early = True
                self.log.append(entry)
                if sink:
                    sink.write(json.dumps(entry) + "\n")
                if self.stopped_early:
                    logger.info("early stop at step %d (best %d)", self.step_count, self.early.best_step)
                    break
        finally:
            if sink:
                sink.close()
        if self.best_state is None:
            self.best_state = codec_state(self.codec, done, {"step": self.step_count})
        return StageResult(self.best_state, self.codec, self.log, self.stopped_early, self.early.best_step)

    # resume

    def state_dict(self) -> dict:
        state = {
            "codec": codec_state(self.codec),
            "opt_g": copy.deepcopy(self.opt_g.state_dict()),
            "sched_g": self.sched_g.state_dict(),
            "generator": self.generator.get_state(),
            "rng": copy.deepcopy(self.rng.bit_generator.state),
            "early": asdict(self.early),
            "step": self.step_count,
            "epoch": self.epoch,
            "order": self.order.copy(),
            "pos": self.pos,
            "config": self.config.to_dict(),
        }
        if self.adversarial:
            state["opt_d"] = copy.deepcopy(self.opt_d.state_dict())
            state["sched_d"] = self.sched_d.state_dict()
        return state

    def load_state_dict(self, state: dict):
        restore_codec(state["codec"], self.codec)
        _set_trainable(self.codec, self.plan, self.ttr_stack)
        self.opt_g.load_state_dict(state["opt_g"])
        self.sched_g.load_state_dict(state["sched_g"])
        if self.adversarial:
            self.opt_d.load_state_dict(state["opt_d"])
            self.sched_d.load_state_dict(state["sched_d"])
        self.generator.set_state(state["generator"])
        self.rng.bit_generator.state = state["rng"]
        self.early = EarlyStopState(**state["early"])
        self.step_count = state["step"]
        self.epoch = state["epoch"]
        self.order = np.asarray(state["order"])
        self.pos = state["pos"]


@dataclass
class StageResult:
    checkpoint: dict
    codec: Codec
    log: list
    stopped_early: bool
    best_step: int


def check_prerequisites(stage_id: int, variant: str | None, init: dict | None, ttr_checkpoint) -> None:
    done = set(init["completed_stages"]) if init else set()
    if stage_id >= 2 and stage_id - 1 not in done:
        raise StageError(f"stage {stage_id} needs a stage-{stage_id - 1} checkpoint")
    if stage_id == 3 and variant == "ttr" and ttr_checkpoint is None:
        raise StageError("stage 3 with the TTR variant needs a TTR checkpoint")


def run_stage(
    config: StageConfig,
    segments: list[TrainingSegment],
    providers: Providers,
    profile=None,
    init: dict | None = None,
    val_segments: list[TrainingSegment] | None = None,
    ttr_checkpoint: dict | None = None,
    log_path=None,
    resume: dict | None = None,
) -> StageResult:
    """Run one training stage from an initial codec checkpoint (None for stage 1)."""
    check_prerequisites(config.stage, config.variant, init, ttr_checkpoint)
    torch.manual_seed(config.seed)
    if init is not None:
        codec = restore_codec(init)
    else:
        if profile is None:
            raise StageError("stage 1 from scratch needs a codec profile")
        codec = Codec(profile, seed=config.seed)
    if config.stage == 1 and init is None:
        codec.fit_pitch_stats([providers.pitch(s.clip.samples) for s in segments])
    need_asr = config.asr_targets if config.variant == "asr" else None
    train = prepare_batches(segments, providers, codec, need_asr)
    val = prepare_batches(val_segments, providers, codec, need_asr) if val_segments else None
    ttr_stack = restore_ttr(ttr_checkpoint) if (ttr_checkpoint is not None and config.variant == "ttr") else None
    runner = StageRunner(config, codec, train, val, providers, ttr_stack)
    if resume is not None:
        runner.load_state_dict(resume)
    done = set(init["completed_stages"]) if init else set()
    return runner.run(log_path=log_path, completed_stages=done)
