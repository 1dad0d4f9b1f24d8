import copy

import numpy as np
import pytest
import torch

from conftest import sine
from lmcodec.audio import AudioClip
from lmcodec.errors import FrontendError
from lmcodec.frontend import (
    TokenSequence,
    asr_greedy_transcribe,
    asr_step_logits,
    extract_features,
    extract_pitch,
    make_synthetic_providers,
    text_embed,
)
from lmcodec.frontend.synthetic import AutocorrelationPitch, HashTextLM, MelProjectionEncoder, SyntheticAsr, TableAsr, UniformAsr
from lmcodec.profiles import PAPER, TINY


@pytest.fixture(scope="module")
def enc16():
    return MelProjectionEncoder(16000, 64, seed=0)


def pulse_train(f0, seconds, rate):
    x = np.zeros(int(seconds * rate))
    x[:: int(round(rate / f0))] = 1.0
    # a short decay makes the pulses glottal-like
    return 0.5 * np.convolve(x, np.exp(-np.arange(40) / 8.0))[: x.size]


class TestFeatures:
    def test_one_second_is_fifty_frames(self, enc16):
        feats = extract_features(enc16, AudioClip(sine(300, 1.0, 16000), 16000))
        assert feats.frames.shape == (50, 64) and feats.frame_rate == 50

    def test_deterministic(self, enc16):
        clip = AudioClip(sine(300, 0.5, 16000), 16000)
        assert np.array_equal(extract_features(enc16, clip).frames, extract_features(enc16, clip).frames)

    @pytest.mark.parametrize("seconds", [0.3, 1.0, 2.02, 3.337])
    def test_frame_rate_contract(self, enc16, seconds):
        clip = AudioClip(sine(200, seconds, 16000), 16000)
        assert abs(extract_features(enc16, clip).n_frames - seconds * 50) <= 1

    def test_too_short(self, enc16):
        with pytest.raises(FrontendError):
            extract_features(enc16, AudioClip(np.zeros(100), 16000))

    def test_wrong_rate(self, enc16):
        with pytest.raises(FrontendError):
            extract_features(enc16, AudioClip(np.zeros(8000), 8000))

    def test_silence_constant_frames(self, enc16):
        f = extract_features(enc16, AudioClip(np.zeros(16000), 16000)).frames
        assert np.allclose(f, f[0])

    def test_paper_dims(self):
        p = make_synthetic_providers(0, PAPER)
        assert extract_features(p.feature, AudioClip(sine(200, 0.5, 16000), 16000)).dim == 768

    def test_seeds(self):
        a, b, c = (make_synthetic_providers(s, TINY) for s in (0, 0, 1))
        x = torch.tensor(sine(250, 0.5, 8000), dtype=torch.float32)
        assert torch.equal(a.feature(x), b.feature(x))
        assert not torch.equal(a.feature.projection, c.feature.projection)


class TestPitch:
    def test_silence(self):
        tracker = AutocorrelationPitch(16000)
        assert not extract_pitch(tracker, AudioClip(np.zeros(16000), 16000)).values.any()

    def test_pulse_train_200hz(self):
        tracker = AutocorrelationPitch(16000)
        p = extract_pitch(tracker, AudioClip(pulse_train(200, 1.0, 16000), 16000))
        assert np.median(p.values[p.values > 0]) == pytest.approx(200, abs=10)

    def test_deterministic_and_frame_count(self):
        tracker = AutocorrelationPitch(8000)
        x = AudioClip(sine(150, 1.3, 8000), 8000)
        a, b = extract_pitch(tracker, x), extract_pitch(tracker, x)
        assert np.array_equal(a.values, b.values) and abs(a.values.size - 65) <= 1


class TestAsr:
    def test_always_end_gives_empty(self):
        seq = asr_greedy_transcribe(TableAsr([], 16, sample_rate=8000), AudioClip(np.zeros(800), 8000))
        assert seq.tokens == () and not seq.truncated

    def test_table_sequence(self):
        seq = asr_greedy_transcribe(TableAsr([3, 1, 4], 16, sample_rate=8000), AudioClip(np.zeros(800), 8000))
        assert seq.tokens == (3, 1, 4)

    def test_truncation_flag(self):
        seq = asr_greedy_transcribe(TableAsr([1] * 10, 16, sample_rate=8000), AudioClip(np.zeros(800), 8000), max_len=4)
        assert seq.tokens == (1, 1, 1, 1) and seq.truncated

    def test_greedy_matches_per_step_argmax(self, providers):
        x = AudioClip(sine(180, 0.6, 8000), 8000)
        seq = asr_greedy_transcribe(providers.asr, x)
        logits = asr_step_logits(providers.asr, x, seq.tokens)
        for i, tok in enumerate(seq.tokens):
            assert int(torch.argmax(logits[i])) == tok

    def test_uniform_logits(self):
        logits = asr_step_logits(UniformAsr(16, 8000), AudioClip(np.zeros(800), 8000), [1, 2])
        assert logits.shape == (3, 16)
        assert float(logits.max() - logits.min()) < 1e-6

    def test_logits_finite_on_random_audio(self, providers):
        x = AudioClip(np.random.default_rng(0).uniform(-1, 1, 4000), 8000)
        assert torch.isfinite(asr_step_logits(providers.asr, x, [1, 2, 3])).all()

    def test_teacher_forcing_causal(self, providers):
        x = AudioClip(sine(220, 0.5, 8000), 8000)
        a = asr_step_logits(providers.asr, x, [1, 2, 3, 4])
        b = asr_step_logits(providers.asr, x, [1, 2, 9, 9])
        assert torch.allclose(a[:3], b[:3], atol=1e-6)
        assert not torch.allclose(a[3:], b[3:])

    def test_non_differentiable_refused(self):
        with pytest.raises(FrontendError):
            asr_step_logits(TableAsr([1], 16, sample_rate=8000), torch.zeros(800), [1], requires_grad=True)

    def test_prefix_out_of_vocab(self, providers):
        with pytest.raises(FrontendError):
            asr_step_logits(providers.asr, torch.zeros(800), [999])

    def test_gradient_matches_finite_difference(self):
        asr = copy.deepcopy(SyntheticAsr(8000, seed=3)).double()
        wave = torch.tensor(sine(170, 0.3, 8000) + 0.01 * np.random.default_rng(1).normal(size=2400), requires_grad=True)
        prefix = [1, 5, 7]
        weights = torch.linspace(-1, 1, asr.vocab_size, dtype=torch.float64)

        def scalar(w):
            return (asr_step_logits(asr, w, prefix, requires_grad=True) * weights).sum()

        (g,) = torch.autograd.grad(scalar(wave), wave)
        h = 1e-6
        for idx in (300, 1200, 2000):
            e = torch.zeros_like(wave)
            e[idx] = h
            with torch.no_grad():
                fd = float((scalar(wave + e) - scalar(wave - e)) / (2 * h))
            assert abs(fd - float(g[idx])) <= 1e-3 * max(abs(fd), 1e-8)

    def test_token_sequence_range(self):
        with pytest.raises(ValueError):
            TokenSequence((1, 20), 16)


class TestTextLM:
    def test_deterministic_nonzero_rows(self):
        lm = HashTextLM(16, seed=0)
        t = text_embed(lm, ["the", "cat", "the"])
        assert torch.equal(t, text_embed(lm, ["the", "cat", "the"]))
        assert (t.norm(dim=1) > 0).all()
        assert torch.equal(t[0], t[2])

    def test_empty(self):
        with pytest.raises(FrontendError):
            text_embed(HashTextLM(8), [])

    def test_oov_maps_to_unk(self, caplog):
        lm = HashTextLM(8, vocab={"a", "b"})
        t = text_embed(lm, ["a", "zzz", "qqq"])
        assert torch.equal(t[1], t[2])
        assert "not in text-LM vocabulary" in caplog.text
