"""Synthetic speech-like corpus with word alignments, for desk-scale runs.

Each vocabulary word is a harmonic source with a word-specific F0 glide
and two formant-like spectral peaks, so words are acoustically distinct
and pitch-trackable.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from lmcodec.audio import AudioClip, save_audio
from lmcodec.data import SubwordAlignment, Utterance, write_alignment, write_manifest

VOCAB = (
    "the", "cat", "sat", "on", "mat", "dog", "ran", "far",
    "a", "red", "sun", "set", "big", "ship", "sailed", "home",
)


def _word_params(word: str, vocab_index: int):
    rng = np.random.default_rng(1000 + vocab_index)
    return {
        "f0": rng.uniform(110.0, 190.0),
        "glide": rng.uniform(-0.25, 0.25),
        "f1": rng.uniform(300.0, 900.0),
        "f2": rng.uniform(1100.0, 2600.0),
        "dur": 0.12 + 0.04 * (len(word) % 5) + rng.uniform(0.0, 0.05),
    }


def synth_word(word: str, sample_rate: int, vocab=VOCAB) -> np.ndarray:
    p = _word_params(word, vocab.index(word) if word in vocab else len(vocab) + hash(word) % 97)
    n = int(round(p["dur"] * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = p["f0"] * (1.0 + p["glide"] * t / p["dur"])
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate
    y = np.zeros(n)
    nyq = sample_rate / 2
    for k in range(1, int(nyq // p["f0"])):
        fk = k * f0
        amp = np.exp(-(((fk - p["f1"]) / 180.0) ** 2)) + 0.6 * np.exp(-(((fk - p["f2"]) / 260.0) ** 2)) + 0.05 / k
        y += np.where(fk < nyq, amp, 0.0) * np.sin(k * phase)
    env = np.minimum(1.0, np.minimum(t, t[::-1]) / 0.015)
    return 0.25 * y * env / max(np.abs(y).max(), 1e-9)


def synth_sentence(words, sample_rate: int, gap_s: float = 0.04, lead_s: float = 0.05):
    """Waveform and word alignments for a word list."""
    pieces = [np.zeros(int(lead_s * sample_rate))]
    alignments = []
    t = lead_s
    for w in words:
        y = synth_word(w, sample_rate)
        alignments.append(SubwordAlignment(w, round(t, 6), round(t + y.size / sample_rate, 6)))
        pieces += [y, np.zeros(int(gap_s * sample_rate))]
        t += (y.size + int(gap_s * sample_rate)) / sample_rate
    return np.concatenate(pieces), alignments


def make_synthetic_utterances(
    n_texts: int = 4,
    utterances_per_text: int = 2,
    sample_rate: int = 8000,
    words_per_utterance=(3, 5),
    seed: int = 0,
    first_text: int = 1,
) -> list[Utterance]:
    """Utterances with LJSpeech-style ids ``LJ{text:03d}-{index:04d}``."""
    rng = np.random.default_rng(seed)
    out = []
    for ti in range(first_text, first_text + n_texts):
        for ui in range(utterances_per_text):
            n_words = int(rng.integers(words_per_utterance[0], words_per_utterance[1] + 1))
            words = [VOCAB[i] for i in rng.integers(0, len(VOCAB), n_words)]
            uid = f"LJ{ti:03d}-{ui + 1:04d}"
            wave, al = synth_sentence(words, sample_rate)
            al = [SubwordAlignment(a.token, a.start_s, a.end_s, uid) for a in al]
            out.append(
                Utterance(
                    id=uid,
                    clip=AudioClip(wave, sample_rate),
                    text=" ".join(words),
                    alignments=al,
                    source_text_id=f"LJ{ti:03d}",
                    order_index=ui,
                )
            )
    return out


def write_synthetic_corpus(root, utterances: list[Utterance]) -> Path:
    """Write wavs, alignment files and ``manifest.jsonl`` under ``root``."""
    root = Path(root)
    (root / "wavs").mkdir(parents=True, exist_ok=True)
    (root / "alignments").mkdir(parents=True, exist_ok=True)
    records = []
    for u in utterances:
        wav = Path("wavs") / f"{u.id}.wav"
        ali = Path("alignments") / f"{u.id}.tsv"
        save_audio(u.clip, root / wav)
        write_alignment(u.alignments, root / ali)
        records.append(
            {
                "id": u.id,
                "audio_path": str(wav),
                "text": u.text,
                "alignment_path": str(ali),
                "source_text_id": u.source_text_id,
                "order_index": u.order_index,
            }
        )
    manifest = root / "manifest.jsonl"
    write_manifest(records, manifest)
    return manifest
