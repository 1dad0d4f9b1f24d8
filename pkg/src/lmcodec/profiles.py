"""Model size profiles.

``paper`` mirrors the reference codec (768-dim 50 Hz features, 128-dim
latents, 32/64-word semantic codebook, 32-word pitch codebook, 16 kHz audio).
``tiny`` keeps every structural property at desk scale and is what the test
suite trains.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace


@dataclass(frozen=True)
class CodecProfile:
    name: str
    sample_rate: int
    feature_rate: float
    feature_dim: int
    latent_dim: int
    k_semantic: int
    k_pitch: int
    semantic_decimation: int = 2
    pitch_decimation: int = 4
    # generator
    gen_channels: int = 32
    upsample_scales: tuple = (8, 8, 5)
    upsample_kernels: tuple = (16, 16, 11)
    resblock_kernels: tuple = (3, 5)
    resblock_dilations: tuple = ((1, 3), (1, 3))
    # discriminators
    mpd_periods: tuple = (2, 3, 5, 7, 11)
    mpd_channels: tuple = (8, 16, 32)
    msd_scales: int = 3
    msd_channels: tuple = (8, 16, 32)
    # mel loss
    mel_bins: int = 20
    # TTR stack
    ttr_dim: int = 32
    ttr_ff: int = 64
    ttr_layers: int = 4
    ttr_heads: int = 2
    # synthetic ASR stand-in
    asr_vocab: int = 32
    asr_dim: int = 32
    asr_heads: int = 2
    asr_max_len: int = 16
    asr_mels: int = 20
    vq_decay: float = 0.99
    vq_noise: float = 1e-3
    extra: dict = field(default_factory=dict)

    @property
    def feature_hop(self) -> int:
        return int(round(self.sample_rate / self.feature_rate))

    @property
    def semantic_rate(self) -> float:
        return self.feature_rate / self.semantic_decimation

    @property
    def pitch_rate(self) -> float:
        return self.feature_rate / self.pitch_decimation

    @property
    def samples_per_code(self) -> int:
        hop = 1
        for s in self.upsample_scales:
            hop *= s
        return hop

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CodecProfile":
        d = dict(d)
        for key in ("upsample_scales", "upsample_kernels", "resblock_kernels", "mpd_periods", "mpd_channels", "msd_channels"):
            if key in d:
                d[key] = tuple(d[key])
        if "resblock_dilations" in d:
            d["resblock_dilations"] = tuple(tuple(x) for x in d["resblock_dilations"])
        return cls(**d)


TINY = CodecProfile(
    name="tiny",
    sample_rate=8000,
    feature_rate=50.0,
    feature_dim=32,
    latent_dim=16,
    k_semantic=8,
    k_pitch=8,
)

PAPER = CodecProfile(
    name="paper",
    sample_rate=16000,
    feature_rate=50.0,
    feature_dim=768,
    latent_dim=128,
    k_semantic=32,
    k_pitch=32,
    gen_channels=512,
    upsample_scales=(10, 8, 2, 2, 2),
    upsample_kernels=(20, 16, 4, 4, 4),
    resblock_kernels=(3, 7, 11),
    resblock_dilations=((1, 3, 5), (1, 3, 5), (1, 3, 5)),
    mpd_channels=(32, 128, 512, 1024),
    msd_channels=(128, 256, 512, 1024),
    mel_bins=80,
    ttr_dim=768,
    ttr_ff=1024,
    ttr_layers=4,
    ttr_heads=12,
    asr_vocab=256,
    asr_dim=384,
    asr_heads=6,
    asr_max_len=448,
    asr_mels=80,
)

PROFILES = {"tiny": TINY, "paper": PAPER}


def get_profile(name: str, **overrides) -> CodecProfile:
    try:
        base = PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None
    return replace(base, **overrides) if overrides else base
