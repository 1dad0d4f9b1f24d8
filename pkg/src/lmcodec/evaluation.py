"""Objective evaluation: WER through pluggable transcribers, optional PESQ/WARP-Q,
a bitrate-by-variant report and side-by-side spectrogram figures."""

from __future__ import annotations

import importlib
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from lmcodec.audio import AudioClip, resample_clip
from lmcodec.codec import Codec, bitrate, pack_bitstream, unpack_bitstream
from lmcodec.data import Utterance
from lmcodec.errors import AdapterUnavailable, EvaluationError, LMCodecError
from lmcodec.frontend import AsrAdapter, asr_greedy_transcribe
from lmcodec.loudness import normalize_loudness

logger = logging.getLogger(__name__)

EVAL_LUFS = -24.0
VARIANT_ORDER = ("ASR", "TTR", "SD", "S2")
REFERENCE = "reference"
UNAVAILABLE = "unavailable"
_FLOOR_DB = -160.0

_PUNCT = re.compile(r"[^\w\s']|(?<!\w)'|'(?!\w)")


def normalize_text(text: str) -> list[str]:
    """Lowercase, strip punctuation, collapse whitespace. Numerals are kept."""
    return _PUNCT.sub(" ", text.lower()).split()


def edit_counts(ref: list[str], hyp: list[str]) -> tuple[int, int, int]:
    """(substitutions, deletions, insertions) of one minimal alignment."""
    n, m = len(ref), len(hyp)
    # rows carry (cost, s, d, i); ties prefer substitution, then deletion
    prev = [(j, 0, 0, j) for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [(i, 0, i, 0)]
        for j in range(1, m + 1):
            c, s, d, ins = prev[j - 1]
            sub = (c + 1, s + 1, d, ins) if ref[i - 1] != hyp[j - 1] else (c, s, d, ins)
            c, s, d, ins = prev[j]
            dele = (c + 1, s, d + 1, ins)
            c, s, d, ins = cur[j - 1]
            inse = (c + 1, s, d, ins + 1)
            cur.append(min(sub, dele, inse, key=lambda t: t[0]))
        prev = cur
    _, s, d, i = prev[m]
    return s, d, i


def wer(reference, hypothesis) -> float:
    """Word error rate in percent. Strings are normalized; lists are used as given."""
    ref = normalize_text(reference) if isinstance(reference, str) else list(reference)
    hyp = normalize_text(hypothesis) if isinstance(hypothesis, str) else list(hypothesis)
    if not ref:
        raise EvaluationError("reference is empty after normalization")
    return 100.0 * sum(edit_counts(ref, hyp)) / len(ref)


def corpus_wer(pairs) -> float:
    """Pooled WER: total errors over total reference words."""
    errors = words = 0
    for ref, hyp in pairs:
        r = normalize_text(ref) if isinstance(ref, str) else list(ref)
        h = normalize_text(hyp) if isinstance(hyp, str) else list(hyp)
        if not r:
            raise EvaluationError("reference is empty after normalization")
        errors += sum(edit_counts(r, h))
        words += len(r)
    if words == 0:
        raise EvaluationError("no reference words")
    return 100.0 * errors / words


# transcribers


class Transcriber:
    """Audio to text. ``settings`` is copied into report metadata."""

    name = "transcriber"
    sample_rate: int | None = None

    @property
    def settings(self) -> dict:
        return {}

    def transcribe(self, clip: AudioClip) -> str:
        raise NotImplementedError

    def _at_rate(self, clip: AudioClip) -> AudioClip:
        return clip if self.sample_rate in (None, clip.sample_rate) else resample_clip(clip, self.sample_rate)


class AdapterTranscriber(Transcriber):
    """Greedy decoding of an :class:`AsrAdapter`, detokenized to text."""

    def __init__(self, adapter: AsrAdapter, name: str | None = None):
        self.adapter = adapter
        self.name = name or adapter.name
        self.sample_rate = adapter.sample_rate

    @property
    def settings(self) -> dict:
        return {"decoding": getattr(self.adapter, "decoding", "greedy"), "max_len": self.adapter.max_len}

    def transcribe(self, clip: AudioClip) -> str:
        tokens = asr_greedy_transcribe(self.adapter, self._at_rate(clip))
        return self.adapter.detokenize(tokens.tokens)


class ExemplarTranscriber(Transcriber):
    """Returns the text of the nearest reference recording by log-spectral distance.

    On audio identical to one of its exemplars (after loudness normalization)
    it is exact, so it serves as a perfect stand-in recognizer for pipeline
    tests; a codec that smears content drifts toward other exemplars.
    """

    name = "exemplar"

    def __init__(self, exemplars: list[tuple[AudioClip, str]], nperseg: int = 256):
        if not exemplars:
            raise EvaluationError("no exemplars")
        self.nperseg = nperseg
        self.sample_rate = exemplars[0][0].sample_rate
        self._bank = [(self._spec(normalize_loudness(c, EVAL_LUFS)), t) for c, t in exemplars]

    @classmethod
    def from_utterances(cls, utterances: list[Utterance], **kw) -> "ExemplarTranscriber":
        return cls([(u.clip, u.text) for u in utterances], **kw)

    def _spec(self, clip: AudioClip) -> np.ndarray:
        return log_spectrogram(clip, self.nperseg)[2]

    def transcribe(self, clip: AudioClip) -> str:
        s = self._spec(self._at_rate(clip))
        best, text = math.inf, ""
        for ref, t in self._bank:
            n = max(ref.shape[1], s.shape[1])
            # pad with a silence floor so length mismatch costs like missing audio
            a = np.pad(ref, ((0, 0), (0, n - ref.shape[1])), constant_values=_FLOOR_DB)
            b = np.pad(s, ((0, 0), (0, n - s.shape[1])), constant_values=_FLOOR_DB)
            d = float(np.mean(np.abs(a - b)))
            if d < best:
                best, text = d, t
        return text


class FailingTranscriber(Transcriber):
    """Always raises; exercises per-utterance failure bookkeeping."""

    name = "failing"

    def transcribe(self, clip: AudioClip) -> str:
        raise EvaluationError("transcriber failure")


# quality metric adapters


class MetricAdapter:
    """Pairwise quality metric bound to an external reference implementation."""

    name = "metric"
    module = ""

    def __init__(self):
        try:
            self._impl = importlib.import_module(self.module)
        except ImportError as exc:
            raise AdapterUnavailable(f"{self.name} needs the '{self.module}' package") from exc

    def __call__(self, reference: AudioClip, degraded: AudioClip) -> float:
        raise NotImplementedError


class PesqAdapter(MetricAdapter):
    name = "PESQ"
    module = "pesq"

    def __call__(self, reference: AudioClip, degraded: AudioClip) -> float:
        rate = 16000 if reference.sample_rate >= 16000 else 8000
        ref, deg = resample_clip(reference, rate), resample_clip(degraded, rate)
        n = min(len(ref), len(deg))
        return float(self._impl.pesq(rate, ref.samples[:n], deg.samples[:n], "wb" if rate == 16000 else "nb"))


class WarpqAdapter(MetricAdapter):
    """Normalized WARP-Q; expects a ``warpq`` module exposing ``normalized_score``."""

    name = "WARPQ"
    module = "warpq"

    def __call__(self, reference: AudioClip, degraded: AudioClip) -> float:
        return float(self._impl.normalized_score(reference.samples, degraded.samples, reference.sample_rate))


METRIC_ADAPTERS = (PesqAdapter, WarpqAdapter)


def load_metric_adapters(names=("PESQ", "WARPQ")) -> dict[str, MetricAdapter | None]:
    """Instantiate metric adapters; missing implementations map to None.

    Raises:
        EvaluationError: a name that is not a known metric.
    """
    known = {cls.name for cls in METRIC_ADAPTERS}
    unknown = [n for n in names if n not in known]
    if unknown:
        raise EvaluationError(f"unknown metrics {unknown}; choose from {sorted(known)}")
    out = {}
    for cls in METRIC_ADAPTERS:
        if cls.name not in names:
            continue
        try:
            out[cls.name] = cls()
        except AdapterUnavailable as exc:
            logger.info("%s", exc)
            out[cls.name] = None
    return out


# codecs under test


class PassThroughCodec:
    """Identity "codec" for pipeline checks."""

    def __init__(self, bitrate_bps: float = math.inf):
        self.bitrate_bps = bitrate_bps

    def resynthesize(self, clip: AudioClip, providers=None) -> AudioClip:
        return clip


def codec_bitrate(codec) -> float:
    if isinstance(codec, Codec):
        p = codec.profile
        return bitrate(p.k_semantic, p.semantic_rate, p.k_pitch, p.pitch_rate)
    return float(getattr(codec, "bitrate_bps", math.inf))


def roundtrip(codec, clip: AudioClip, providers=None) -> AudioClip:
    """Encode, serialize, parse and decode; output is cropped to the input length."""
    if isinstance(codec, Codec):
        out = codec.decode(unpack_bitstream(pack_bitstream(codec.encode(clip, providers))))
        n = min(len(out), len(clip))
        return out.with_samples(out.samples[:n])
    return codec.resynthesize(clip, providers)


# report


@dataclass
class UtteranceResult:
    id: str
    reference: str
    hypotheses: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)


@dataclass
class EvalRow:
    bitrate: float
    variant: str
    wer: dict
    metrics: dict
    n_utterances: int
    failures: dict = field(default_factory=dict)
    utterances: list = field(default_factory=list)

    def sort_key(self):
        v = VARIANT_ORDER.index(self.variant) if self.variant in VARIANT_ORDER else len(VARIANT_ORDER)
        return (self.bitrate, v, self.variant)

    def to_dict(self, detail: bool = False) -> dict:
        d = {
            "bitrate": None if math.isinf(self.bitrate) else self.bitrate,
            "variant": self.variant,
            "wer": self.wer,
            "metrics": self.metrics,
            "n_utterances": self.n_utterances,
            "failures": self.failures,
        }
        if detail:
            d["utterances"] = [u.__dict__ for u in self.utterances]
        return d


@dataclass
class EvalReport:
    rows: list
    asr_names: list
    metric_names: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = sorted(self.rows, key=EvalRow.sort_key)

    def to_dict(self, detail: bool = False) -> dict:
        return {
            "columns": self.columns(),
            "rows": [r.to_dict(detail) for r in self.rows],
            "metadata": self.metadata,
        }

    def to_json(self, detail: bool = False) -> str:
        return json.dumps(self.to_dict(detail), indent=2, default=str)

    def columns(self) -> list[str]:
        return ["Bitrate (bps)", "Variant"] + [f"WER {n} (%)" for n in self.asr_names] + list(self.metric_names)

    def table_rows(self) -> list[list[str]]:
        out = []
        for r in self.rows:
            cells = ["inf" if math.isinf(r.bitrate) else f"{r.bitrate:g}", r.variant]
            for n in self.asr_names:
                v = r.wer.get(n, UNAVAILABLE)
                cells.append(f"{v:.2f}" if isinstance(v, float) else str(v))
            for n in self.metric_names:
                v = r.metrics.get(n, UNAVAILABLE)
                cells.append(f"{v:.3f}" if isinstance(v, float) else str(v))
            out.append(cells)
        return out

    def to_table(self) -> str:
        header = self.columns()
        body = self.table_rows()
        widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
        fmt = lambda row: "  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(row, widths)))
        lines = [fmt(header), "  ".join("-" * w for w in widths)] + [fmt(r) for r in body]
        return "\n".join(lines)


def _as_transcribers(asr) -> dict[str, Transcriber]:
    out = {}
    for t in asr:
        t = AdapterTranscriber(t) if isinstance(t, AsrAdapter) else t
        if t.name in out:
            raise EvaluationError(f"duplicate transcriber name {t.name!r}")
        out[t.name] = t
    if not out:
        raise EvaluationError("no ASR adapters registered")
    return out


def evaluate_codec(
    codec,
    test_set: list[Utterance],
    asr,
    metrics: dict | None = None,
    providers=None,
    variant: str = "S2",
    seed: int = 0,
) -> EvalRow:
    """One report row for ``codec`` (or the reference row when ``codec`` is None).

    Each utterance is encoded, decoded, normalized to -24 LUFS and transcribed
    by every adapter. Failures are recorded per utterance and the pooled WER
    covers the utterances that succeeded for that adapter.
    """
    if not test_set:
        raise EvaluationError("empty test set")
    transcribers = _as_transcribers(asr)
    metrics = dict(metrics or {})
    torch.manual_seed(seed)
    results = []
    for utt in test_set:
        res = UtteranceResult(utt.id, utt.text)
        try:
            decoded = utt.clip if codec is None else roundtrip(codec, utt.clip, providers)
            heard = normalize_loudness(decoded, EVAL_LUFS)
        except LMCodecError as exc:
            for name in list(transcribers) + list(metrics):
                res.errors[name] = f"{type(exc).__name__}: {exc}"
            results.append(res)
            continue
        for name, t in transcribers.items():
            try:
                res.hypotheses[name] = t.transcribe(heard)
            except Exception as exc:  # adapters are external code
                res.errors[name] = f"{type(exc).__name__}: {exc}"
        for name, m in metrics.items():
            if m is None:
                continue
            try:
                res.metrics[name] = m(normalize_loudness(utt.clip, EVAL_LUFS), heard)
            except Exception as exc:
                res.errors[name] = f"{type(exc).__name__}: {exc}"
        results.append(res)

    wers, failures = {}, {}
    for name in transcribers:
        pairs = [(r.reference, r.hypotheses[name]) for r in results if name in r.hypotheses]
        failures[name] = [r.id for r in results if name in r.errors]
        wers[name] = corpus_wer(pairs) if pairs else UNAVAILABLE
    values = {}
    for name, m in metrics.items():
        scores = [r.metrics[name] for r in results if name in r.metrics]
        failures[name] = [r.id for r in results if name in r.errors]
        values[name] = float(np.mean(scores)) if (m is not None and scores) else UNAVAILABLE
    failures = {k: v for k, v in failures.items() if v}
    rate = math.inf if codec is None else codec_bitrate(codec)
    return EvalRow(rate, REFERENCE if codec is None else variant, wers, values, len(test_set), failures, results)


def build_report(rows: list[EvalRow], asr, metrics: dict | None = None, **metadata) -> EvalReport:
    transcribers = _as_transcribers(asr)
    meta = {
        "loudness_target_lufs": EVAL_LUFS,
        "wer_pooling": "corpus",
        "text_normalization": "lowercase, punctuation stripped, whitespace collapsed",
        "asr_settings": {n: t.settings for n, t in transcribers.items()},
    }
    meta.update(metadata)
    names = list(metrics) if metrics is not None else ["PESQ", "WARPQ"]
    return EvalReport(list(rows), list(transcribers), names, meta)


# spectrograms


def log_spectrogram(clip: AudioClip, nperseg: int = 512):
    """(freqs Hz, times s, dB magnitude) of a Hann STFT."""
    from scipy.signal import stft

    if len(clip) == 0:
        raise EvaluationError("zero-length audio")
    nperseg = min(nperseg, len(clip))
    f, t, z = stft(clip.samples, fs=clip.sample_rate, nperseg=nperseg, noverlap=nperseg * 3 // 4, boundary=None, padded=True)
    return f, t, 20.0 * np.log10(np.abs(z) + 1e-8)


@dataclass
class SpectrogramPair:
    freqs: np.ndarray
    times: np.ndarray
    reference: np.ndarray
    decoded: np.ndarray
    vmin: float
    vmax: float
    path: Path


def spectrogram_compare(x: AudioClip, x_hat: AudioClip, out_path, nperseg: int = 512, titles=("Input", "Decoded")) -> SpectrogramPair:
    """Stack the two log-magnitude spectrograms with a shared color scale and save."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if x.sample_rate != x_hat.sample_rate:
        x_hat = resample_clip(x_hat, x.sample_rate)
    n = min(len(x), len(x_hat))
    if n == 0:
        raise EvaluationError("zero-length audio")
    f, t, a = log_spectrogram(x.with_samples(x.samples[:n]), nperseg)
    _, _, b = log_spectrogram(x_hat.with_samples(x_hat.samples[:n]), nperseg)
    vmax = float(max(a.max(), b.max()))
    vmin = max(float(min(a.min(), b.min())), vmax - 100.0)
    fig, axes = plt.subplots(2, 1, sharex=True, sharey=True, figsize=(8, 5))
    for ax, m, title in zip(axes, (a, b), titles):
        mesh = ax.pcolormesh(t, f, m, shading="auto", vmin=vmin, vmax=vmax, cmap="magma")
        ax.set_title(title)
        ax.set_ylabel("Frequency (Hz)")
    axes[-1].set_xlabel("Time (s)")
    fig.colorbar(mesh, ax=list(axes), label="dB")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    return SpectrogramPair(f, t, a, b, vmin, vmax, out_path)
