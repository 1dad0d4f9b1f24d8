"""Request and response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class Health(BaseModel):
    status: str = "ok"
    version: str
    profiles: list[str]
    codec_loaded: bool


class BitrateRequest(BaseModel):
    k_semantic: int = Field(32, ge=2)
    rate_semantic: float = Field(25.0, gt=0)
    k_pitch: int = Field(32, ge=2)
    rate_pitch: float = Field(12.5, gt=0)


class BitrateResponse(BaseModel):
    bps: float
    packed_bps: float


class WerRequest(BaseModel):
    reference: str
    hypothesis: str


class WerResponse(BaseModel):
    wer: float
    substitutions: int
    deletions: int
    insertions: int
    reference_words: int


class LoudnessRequest(BaseModel):
    samples: list[float] = Field(min_length=1)
    sample_rate: int = Field(16000, gt=0)
    target_lufs: float = -24.0


class LoudnessResponse(BaseModel):
    integrated_lufs: float | None
    gain_db: float | None


class EncodeRequest(BaseModel):
    wav_base64: str


class EncodeResponse(BaseModel):
    bitstream_base64: str
    bytes: int
    semantic_codes: int
    pitch_codes: int
    bitrate_bps: float


class DecodeRequest(BaseModel):
    bitstream_base64: str


class DecodeResponse(BaseModel):
    wav_base64: str
    sample_rate: int
    duration_s: float


class ErrorBody(BaseModel):
    error: str
    type: str
    message: str
