import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import sine
from lmcodec.data import SubwordAlignment
from lmcodec.errors import AlignmentError, FrontendError, ShapeError
from lmcodec.frontend import asr_greedy_transcribe, asr_step_logits, parameter_hash
from lmcodec.frontend.synthetic import TableAsr
from lmcodec.losses import (
    Aggregator,
    Summarizer,
    TTRStack,
    asr_loss,
    sd_loss,
    segment_runs,
    summarize,
    ttr_codec_loss,
    ttr_loss,
)
from lmcodec.profiles import TINY


def al(start, end, token="w"):
    return SubwordAlignment(token, start, end)


class TestSegmentRuns:
    def test_floor_ceil(self):
        assert segment_runs(50, 50.0, [al(0.1, 0.55)]) == [(5, 28)]

    def test_exact_frame_boundaries(self):
        # 0.3 * 50 is 15.000000000000002 in floating point
        assert segment_runs(50, 50.0, [al(0.0, 0.3), al(0.3, 0.6)]) == [(0, 15), (15, 30)]

    def test_collapsed_range_gets_one_frame(self):
        # starts on the last frame boundary, so clipping empties the range
        assert segment_runs(10, 50.0, [al(0.2, 0.21)]) == [(9, 10)]

    def test_clipped_within_tolerance(self):
        assert segment_runs(10, 50.0, [al(0.1, 0.22)]) == [(5, 10)]

    def test_past_end_rejected(self):
        with pytest.raises(AlignmentError):
            segment_runs(10, 50.0, [al(0.1, 0.5)])


@pytest.fixture(scope="module")
def small_summarizer():
    torch.manual_seed(0)
    return Summarizer(6, 8, 16, 2, 2).eval()


class TestSummarizerAggregator:
    def test_output_shape_and_determinism(self, small_summarizer):
        runs = [torch.randn(n, 6) for n in (1, 4, 7)]
        a = small_summarizer(runs)
        assert a.shape == (3, 8)
        assert torch.equal(a, small_summarizer(runs))

    def test_runs_are_independent(self, small_summarizer):
        g = torch.Generator().manual_seed(1)
        runs = [torch.randn(n, 6, generator=g) for n in (3, 5, 2)]
        base = small_summarizer(runs)
        runs[1] = runs[1] + 1.0
        moved = small_summarizer(runs)
        assert torch.allclose(base[[0, 2]], moved[[0, 2]], atol=1e-5)
        assert not torch.allclose(base[1], moved[1], atol=1e-3)

    def test_batched_matches_single(self, small_summarizer):
        runs = [torch.randn(n, 6) for n in (2, 9)]
        batched = small_summarizer(runs)
        for i, r in enumerate(runs):
            assert torch.allclose(summarize(small_summarizer, r), batched[i], atol=1e-5)

    def test_empty_run_rejected(self, small_summarizer):
        with pytest.raises(ShapeError):
            small_summarizer([torch.zeros(0, 6)])

    def test_aggregator_mixes_and_preserves_length(self):
        torch.manual_seed(0)
        agg = Aggregator(8, 16, 2, 2).eval()
        s = torch.randn(4, 8)
        out = agg(s)
        assert out.shape == s.shape
        s2 = s.clone()
        # a constant shift would be removed by layer norm
        s2[3] += torch.randn(8, generator=torch.Generator().manual_seed(2))
        assert not torch.allclose(agg(s2)[0], out[0], atol=1e-5)
        with pytest.raises(ShapeError):
            agg(torch.zeros(0, 8))


def naive_ttr(s, t):
    n = len(s)
    cos = sum(1 - np.dot(s[i], t[i]) / (np.linalg.norm(s[i]) * np.linalg.norm(t[i])) for i in range(n)) / n
    gram = 0.0
    for i in range(n):
        for j in range(i, n):
            gram += (np.dot(s[i], s[j]) - np.dot(t[i], t[j])) ** 2
    return cos + gram * 2 / (n * (n + 1))


class TestTtrLoss:
    def test_identical_is_zero(self):
        t = torch.randn(5, 4, dtype=torch.float64)
        assert ttr_loss(t, t.clone()).item() == pytest.approx(0.0, abs=1e-12)

    def test_negated_is_two(self):
        t = torch.randn(5, 4, dtype=torch.float64)
        assert ttr_loss(-t, t).item() == pytest.approx(2.0, abs=1e-12)

    def test_hand_example(self):
        s = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
        t = torch.tensor([[0.0, 2.0]], dtype=torch.float64)
        assert ttr_loss(s, t).item() == pytest.approx(10.0)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 6), st.integers(0, 2**31 - 1))
    def test_matches_naive_oracle(self, n, d, seed):
        rng = np.random.default_rng(seed)
        s, t = rng.normal(size=(n, d)) + 0.1, rng.normal(size=(n, d)) + 0.1
        got = ttr_loss(torch.tensor(s), torch.tensor(t)).item()
        assert got == pytest.approx(naive_ttr(s, t), rel=1e-10, abs=1e-12)
        assert got >= 0

    def test_errors(self):
        with pytest.raises(ShapeError):
            ttr_loss(torch.zeros(2, 3), torch.ones(2, 3))
        with pytest.raises(ShapeError):
            ttr_loss(torch.ones(2, 3), torch.ones(3, 3))


class TestAsrLoss:
    def test_matches_per_step_cross_entropy(self, providers):
        asr = providers.asr
        x = torch.tensor(sine(200, 0.5, TINY.sample_rate), dtype=torch.float32)
        targets = [t for t in asr_greedy_transcribe(asr, x).tokens if t not in asr.specials][:6] or [1, 2]
        got = asr_loss(asr, x, targets).item()
        ce = []
        for i, tok in enumerate(targets):
            row = asr_step_logits(asr, x, targets[:i])[-1].double()
            ce.append(-torch.log_softmax(row, -1)[tok].item())
        assert got == pytest.approx(float(np.mean(ce)), rel=1e-5)

    def test_specials_excluded(self, providers):
        asr = providers.asr
        x = torch.tensor(sine(200, 0.5, TINY.sample_rate), dtype=torch.float32)
        a = asr_loss(asr, x, [asr.bos, 3, 4, asr.eos]).item()
        assert a == pytest.approx(asr_loss(asr, x, [3, 4]).item())

    def test_empty_targets(self, providers):
        with pytest.raises(FrontendError):
            asr_loss(providers.asr, torch.zeros(800), [])
        with pytest.raises(FrontendError):
            asr_loss(providers.asr, torch.zeros(800), [providers.asr.eos])

    def test_non_differentiable_refused(self):
        with pytest.raises(FrontendError):
            asr_loss(TableAsr([1], 16, sample_rate=8000), torch.zeros(800), [1])

    def test_gradient_reaches_audio(self, providers):
        x = torch.tensor(sine(200, 0.5, TINY.sample_rate), dtype=torch.float32, requires_grad=True)
        asr_loss(providers.asr, x, [3, 4, 5]).backward()
        assert x.grad is not None and x.grad.abs().sum() > 0


class TestSdLoss:
    def test_examples(self):
        a = torch.ones(3, 4)
        assert sd_loss(a, a.clone()).item() == 0.0
        assert sd_loss(a, torch.zeros(3, 4)).item() == 1.0
        assert sd_loss(torch.zeros(2, 2), torch.tensor([[2.0, 0.0], [0.0, 0.0]])).item() == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            sd_loss(torch.zeros(3, 4), torch.zeros(4, 4))


class TestTtrCodecLoss:
    @pytest.fixture(scope="class")
    @classmethod
    def stack(cls, providers):
        torch.manual_seed(0)
        return TTRStack(providers.ttr_speech.dim, TINY.ttr_dim, TINY.ttr_ff, 2, TINY.ttr_heads)

    def test_frozen_models_untouched(self, providers, stack, utterances):
        u = utterances[0]
        before = (parameter_hash(providers.ttr_speech), parameter_hash(providers.text_lm))
        x = torch.tensor(u.clip.samples, dtype=torch.float32, requires_grad=True)
        loss = ttr_codec_loss(x, u.alignments, [a.token for a in u.alignments], stack, providers.ttr_speech, providers.text_lm)
        loss.backward()
        assert math.isfinite(loss.item()) and loss.item() >= 0
        assert x.grad is not None and x.grad.abs().sum() > 0
        assert (parameter_hash(providers.ttr_speech), parameter_hash(providers.text_lm)) == before

    def test_script_length_mismatch(self, providers, stack, utterances):
        u = utterances[0]
        x = torch.tensor(u.clip.samples, dtype=torch.float32)
        with pytest.raises(AlignmentError):
            ttr_codec_loss(x, u.alignments, ["a"] * (len(u.alignments) + 1), stack, providers.ttr_speech, providers.text_lm)
        with pytest.raises(AlignmentError):
            ttr_codec_loss(x, [], [], stack, providers.ttr_speech, providers.text_lm)
