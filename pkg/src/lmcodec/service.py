"""HTTP wrapper around the codec and metrics.

Run with ``uvicorn lmcodec.service:app``. Set ``LMCODEC_CHECKPOINT`` to a
codec checkpoint to enable ``/encode`` and ``/decode``.
"""

from __future__ import annotations

import base64
import binascii
import math
import os
import tempfile
from functools import lru_cache
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from lmcodec import __version__
from lmcodec.audio import AudioClip, load_audio, save_audio
from lmcodec.checkpoint import load_codec
from lmcodec.codec import bitrate, pack_bitstream, packed_bitrate, unpack_bitstream
from lmcodec.config import load_config
from lmcodec.errors import LMCodecError
from lmcodec.evaluation import edit_counts, normalize_text, wer
from lmcodec.loudness import integrated_loudness
from lmcodec.profiles import PROFILES
from lmcodec import schemas

app = FastAPI(title="lmcodec", version=__version__)


@lru_cache(maxsize=2)
def _load(path: str, config: str | None):
    codec, _ = load_codec(path)
    return codec, load_config(config).build_providers(codec.profile)


def _codec():
    path = os.environ.get("LMCODEC_CHECKPOINT")
    return _load(path, os.environ.get("LMCODEC_CONFIG")) if path else None


def _require_codec():
    loaded = _codec()
    if loaded is None:
        raise HTTPException(503, detail="no codec loaded; set LMCODEC_CHECKPOINT")
    return loaded


def _b64(data: str) -> bytes:
    try:
        return base64.b64decode(data, validate=True)
    except (binascii.Error, ValueError):
        raise HTTPException(422, detail="invalid base64 payload") from None


@app.exception_handler(LMCodecError)
async def _codec_error(request: Request, exc: LMCodecError):
    return JSONResponse(status_code=422, content=exc.to_dict())


@app.get("/health", response_model=schemas.Health)
def health():
    return schemas.Health(version=__version__, profiles=sorted(PROFILES), codec_loaded=_codec() is not None)


@app.post("/bitrate", response_model=schemas.BitrateResponse)
def bitrate_endpoint(req: schemas.BitrateRequest):
    args = (req.k_semantic, req.rate_semantic, req.k_pitch, req.rate_pitch)
    return schemas.BitrateResponse(bps=bitrate(*args), packed_bps=packed_bitrate(*args))


@app.post("/wer", response_model=schemas.WerResponse)
def wer_endpoint(req: schemas.WerRequest):
    ref, hyp = normalize_text(req.reference), normalize_text(req.hypothesis)
    score = wer(ref, hyp)
    s, d, i = edit_counts(ref, hyp)
    return schemas.WerResponse(wer=score, substitutions=s, deletions=d, insertions=i, reference_words=len(ref))


@app.post("/loudness", response_model=schemas.LoudnessResponse)
def loudness_endpoint(req: schemas.LoudnessRequest):
    import numpy as np

    lufs = integrated_loudness(AudioClip(np.asarray(req.samples, dtype=np.float64), req.sample_rate))
    if not math.isfinite(lufs):
        return schemas.LoudnessResponse(integrated_lufs=None, gain_db=None)
    return schemas.LoudnessResponse(integrated_lufs=lufs, gain_db=req.target_lufs - lufs)


@app.post("/encode", response_model=schemas.EncodeResponse)
def encode_endpoint(req: schemas.EncodeRequest):
    codec, providers = _require_codec()
    with tempfile.TemporaryDirectory() as tmp:
        wav = Path(tmp) / "in.wav"
        wav.write_bytes(_b64(req.wav_base64))
        clip = load_audio(wav, codec.profile.sample_rate)
    cs = codec.encode(clip, providers)
    data = pack_bitstream(cs)
    p = codec.profile
    return schemas.EncodeResponse(
        bitstream_base64=base64.b64encode(data).decode(),
        bytes=len(data),
        semantic_codes=len(cs.semantic_indices),
        pitch_codes=len(cs.pitch_indices),
        bitrate_bps=bitrate(p.k_semantic, p.semantic_rate, p.k_pitch, p.pitch_rate),
    )


@app.post("/decode", response_model=schemas.DecodeResponse)
def decode_endpoint(req: schemas.DecodeRequest):
    codec, _ = _require_codec()
    clip = codec.decode(unpack_bitstream(_b64(req.bitstream_base64)))
    with tempfile.TemporaryDirectory() as tmp:
        wav = Path(tmp) / "out.wav"
        save_audio(clip, wav)
        data = wav.read_bytes()
    return schemas.DecodeResponse(
        wav_base64=base64.b64encode(data).decode(), sample_rate=clip.sample_rate, duration_s=clip.duration_s
    )
