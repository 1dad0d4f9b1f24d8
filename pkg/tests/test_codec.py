import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from lmcodec.checkpoint import load_codec, save_codec
from lmcodec.codec import (
    Codebook,
    Codec,
    CodeStream,
    VectorQuantizer,
    bitrate,
    bits_per_index,
    decode_semantic_features,
    decode_waveform,
    ema_update,
    encode_semantic,
    pack_bitstream,
    packed_bitrate,
    quantize,
    reconstruction_losses,
    reinit_dead_codes,
    unpack_bitstream,
)
from lmcodec.codec.modules import SemanticEncoder, fuse_branches
from lmcodec.errors import BitstreamError, CheckpointError, ShapeError
from lmcodec.frontend import extract_features
from lmcodec.frontend.types import FeatureSequence
from lmcodec.profiles import PAPER, TINY


@pytest.fixture(scope="module")
def codec():
    return Codec(TINY, seed=0)


class TestQuantizer:
    def test_commitment_example(self):
        cb = Codebook(2, 2, init=torch.tensor([[0.0, 0.0], [1.0, 1.0]]))
        out = quantize(cb, torch.tensor([[0.1, 0.1]]))
        assert out.indices.item() == 0
        assert out.commitment_loss.item() == pytest.approx(0.01)
        assert torch.equal(out.quantized, torch.zeros(1, 2))

    def test_shape_errors(self):
        cb = Codebook(4, 3)
        with pytest.raises(ShapeError):
            quantize(cb, torch.zeros(5, 2))
        with pytest.raises(ShapeError):
            quantize(cb, torch.zeros(0, 3))
        with pytest.raises(ValueError):
            Codebook(1, 3)

    def test_ema_converges_to_cluster_mean(self):
        cb = Codebook(2, 1, decay=0.9, init=torch.tensor([[0.0], [10.0]], dtype=torch.float64))
        pts = torch.tensor([[1.0], [3.0], [9.0], [11.0]], dtype=torch.float64)
        for _ in range(300):
            ema_update(cb, pts, quantize(cb, pts).indices)
        assert torch.allclose(cb.entries, torch.tensor([[2.0], [10.0]], dtype=torch.float64), atol=1e-9)

    def test_zero_decay_is_batch_mean(self):
        cb = Codebook(3, 2, decay=0.0, init=torch.tensor([[0.0, 0.0], [5.0, 5.0], [-5.0, -5.0]], dtype=torch.float64))
        pts = torch.tensor([[1.0, 0.0], [0.0, 1.0], [5.0, 6.0]], dtype=torch.float64)
        ema_update(cb, pts, torch.tensor([0, 0, 1]))
        assert torch.allclose(cb.entries[:2], torch.tensor([[0.5, 0.5], [5.0, 6.0]], dtype=torch.float64))

    def test_dead_code_reinit_deterministic_and_local(self):
        init = torch.arange(8.0).reshape(4, 2)
        latents = torch.randn(3, 2, generator=torch.Generator().manual_seed(1))
        usage = torch.tensor([2, 0, 1, 0])
        runs = []
        for _ in range(2):
            cb = Codebook(4, 2, init=init)
            dead = reinit_dead_codes(cb, usage, latents, torch.Generator().manual_seed(7))
            runs.append(cb.entries.clone())
            assert dead.tolist() == [1, 3]
            assert torch.equal(cb.entries[[0, 2]], init[[0, 2]])
            assert torch.equal(cb.ema_cluster_size[[1, 3]], torch.ones(2))
        assert torch.equal(runs[0], runs[1])
        # new entries sit within noise of some batch latent
        d = torch.cdist(runs[0][[1, 3]], latents).min(dim=1).values
        assert d.max() < 0.01

    def test_straight_through(self):
        vq = VectorQuantizer(4, 3, generator=torch.Generator().manual_seed(0))
        z = torch.randn(2, 3, 5, requires_grad=True)
        q, idx, _, _ = vq(z)
        w = torch.randn_like(q)
        (q * w).sum().backward()
        assert torch.equal(z.grad, w)
        # z + (e - z) equals e up to float rounding
        assert torch.allclose(q.detach(), vq.decode(idx), atol=1e-6, rtol=0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 16), st.integers(1, 40), st.integers(0, 2**31 - 1))
    def test_nearest_is_argmin(self, k, n, seed):
        g = torch.Generator().manual_seed(seed)
        cb = Codebook(k, 3, generator=g)
        x = torch.randn(n, 3, generator=g, dtype=torch.float64)
        out = quantize(cb, x)
        d = torch.cdist(x, cb.entries.double())
        chosen = d.gather(1, out.indices[:, None]).squeeze(1)
        assert torch.all(chosen <= d.min(dim=1).values + 1e-9)
        assert int(cb.usage.sum()) == n


class TestBitstream:
    def test_bits_per_index(self):
        assert [bits_per_index(k) for k in (1, 2, 32, 33, 64)] == [0, 1, 5, 6, 6]

    def test_bitrate_examples(self):
        assert bitrate(32, 25, 32, 12.5) == 187.5
        assert bitrate(64, 25, 32, 12.5) == 212.5
        assert bitrate(2, 1, 1, 7) == 1
        assert packed_bitrate(33, 25, 32, 12.5) == 25 * 6 + 12.5 * 5

    def test_bitrate_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            bitrate(0, 25, 32, 12.5)
        with pytest.raises(ValueError):
            bitrate(32, 0, 32, 12.5)

    def test_payload_bits(self):
        cs = CodeStream([1] * 10, [2] * 5, 16000, 32, 32, 25, 12.5)
        assert cs.payload_bits == 5 * 15
        assert len(pack_bitstream(cs)) - len(pack_bitstream(CodeStream([], [], 16000, 32, 32, 25, 12.5))) == math.ceil(75 / 8)

    def test_index_out_of_range(self):
        with pytest.raises(BitstreamError):
            CodeStream([32], [], 16000, 32, 32, 25, 12.5)

    @settings(max_examples=200, deadline=None)
    @given(
        st.integers(1, 300),
        st.integers(1, 300),
        st.data(),
    )
    def test_roundtrip_property(self, ks, kp, data):
        sem = data.draw(st.lists(st.integers(0, ks - 1), max_size=60))
        pit = data.draw(st.lists(st.integers(0, kp - 1), max_size=30))
        cs = CodeStream(sem, pit, 16000, ks, kp, 25.0, 12.5)
        assert unpack_bitstream(pack_bitstream(cs)) == cs

    @pytest.mark.parametrize(
        "mutate, code",
        [
            (lambda b: b"XXXX" + b[4:], "bad_magic"),
            (lambda b: b[:4] + bytes([9]) + b[5:], "version_mismatch"),
            (lambda b: b[:-1], "truncated"),
            (lambda b: b[:10], "truncated"),
            (lambda b: b + b"\0", "trailing_data"),
        ],
    )
    def test_corruption(self, mutate, code):
        data = pack_bitstream(CodeStream([3, 4, 5], [1, 2], 8000, 8, 8, 25, 12.5))
        with pytest.raises(BitstreamError) as exc:
            unpack_bitstream(mutate(data))
        assert exc.value.code == code


class TestShapes:
    def test_paper_semantic_encoder_rate(self):
        torch.manual_seed(0)
        enc = SemanticEncoder(PAPER.feature_dim, PAPER.latent_dim)
        z = enc(torch.randn(1, 100, PAPER.feature_dim))
        assert z.shape == (1, 128, 50)
        assert enc(torch.randn(1, 3, PAPER.feature_dim)).shape[-1] == 2

    def test_encode_semantic(self, codec):
        feats = FeatureSequence(np.random.default_rng(0).normal(size=(100, TINY.feature_dim)), 50.0)
        assert encode_semantic(codec, feats).shape == (50, TINY.latent_dim)
        short = FeatureSequence(np.zeros((2, TINY.feature_dim)), 50.0)
        assert encode_semantic(codec, short).shape == (1, TINY.latent_dim)
        with pytest.raises(ShapeError):
            encode_semantic(codec, FeatureSequence(np.zeros((1, TINY.feature_dim)), 50.0))
        with pytest.raises(ShapeError):
            encode_semantic(codec, FeatureSequence(np.zeros((10, 3)), 50.0))

    def test_decode_waveform_duration(self, codec):
        clip = decode_waveform(codec, torch.randn(25, TINY.latent_dim), torch.randn(13, TINY.latent_dim))
        assert clip.sample_rate == TINY.sample_rate
        assert clip.duration_s == pytest.approx(1.0)

    def test_fuse_rejects_inconsistent_rates(self):
        with pytest.raises(ShapeError):
            fuse_branches(torch.zeros(1, 4, 25), torch.zeros(1, 4, 20))

    def test_decode_semantic_features(self, codec):
        seq = decode_semantic_features(codec, torch.randn(50, TINY.latent_dim))
        assert seq.frames.shape == (100, TINY.feature_dim)
        assert seq.frame_rate == TINY.feature_rate

    def test_encode_decode_clip(self, codec, providers, utterances):
        clip = utterances[0].clip
        cs = codec.encode(clip, providers)
        n_feat = extract_features(providers.feature, clip).n_frames
        assert len(cs.semantic_indices) == math.ceil(n_feat / 2)
        assert len(cs.pitch_indices) == math.ceil(n_feat / 4)
        out = codec.decode(unpack_bitstream(pack_bitstream(cs)))
        assert len(out) == len(cs.semantic_indices) * TINY.samples_per_code
        assert np.all(np.isfinite(out.samples))

    def test_decode_rejects_foreign_stream(self, codec):
        with pytest.raises(ShapeError):
            codec.decode(CodeStream([0], [0], 16000, 32, 32, 25, 12.5))


class TestReconstructionLosses:
    def test_identity_and_nonzero(self, codec):
        x = torch.tensor(np.sin(np.arange(4000) * 0.1), dtype=torch.float32)[None] * 0.3
        same = reconstruction_losses(codec, x, x.clone())
        assert same["mel_l1"].item() == 0.0
        assert same["feature_matching"].item() == 0.0
        zero = reconstruction_losses(codec, x, torch.zeros_like(x))
        assert zero["mel_l1"].item() > 0 and zero["feature_matching"].item() > 0

    def test_mel_symmetric(self, codec):
        g = torch.Generator().manual_seed(0)
        a, b = torch.randn(1, 2000, generator=g) * 0.1, torch.randn(1, 2000, generator=g) * 0.1
        assert reconstruction_losses(codec, a, b)["mel_l1"].item() == pytest.approx(
            reconstruction_losses(codec, b, a)["mel_l1"].item(), rel=1e-6
        )

    def test_length_mismatch(self, codec):
        hop = TINY.samples_per_code
        reconstruction_losses(codec, torch.zeros(1, 2000), torch.zeros(1, 2000 + hop))
        with pytest.raises(ShapeError):
            reconstruction_losses(codec, torch.zeros(1, 2000), torch.zeros(1, 2000 + hop + 1))


def test_encoder_gradient_finite_difference():
    codec = Codec(TINY, seed=3).double()
    feats = torch.randn(1, 20, TINY.feature_dim, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    target = torch.randn(1, 20, TINY.feature_dim, dtype=torch.float64, generator=torch.Generator().manual_seed(1))

    def loss():
        z = codec.semantic_encoder(feats)
        y = codec.feature_decoders["semantic"](z)
        return torch.mean((y[:, : feats.shape[1]] - target) ** 2)

    w = codec.semantic_encoder.input_proj.weight
    codec.zero_grad()
    loss().backward()
    analytic = w.grad[0, 0, 1].item()
    eps = 1e-6
    with torch.no_grad():
        w[0, 0, 1] += eps
        up = loss().item()
        w[0, 0, 1] -= 2 * eps
        down = loss().item()
        w[0, 0, 1] += eps
    numeric = (up - down) / (2 * eps)
    assert abs(analytic - numeric) <= 1e-3 * max(1.0, abs(numeric))


class TestCheckpoint:
    def test_roundtrip_bitwise(self, tmp_path):
        codec = Codec(TINY, seed=5)
        codec.fit_pitch_stats([np.array([100.0, 0.0, 200.0, 150.0])])
        save_codec(tmp_path / "c.pt", codec, completed_stages=[1], meta={"note": "x"})
        back, blob = load_codec(tmp_path / "c.pt")
        assert blob["completed_stages"] == [1] and blob["meta"]["note"] == "x"
        a, b = codec.state_dict(), back.state_dict()
        assert a.keys() == b.keys()
        assert all(torch.equal(a[k], b[k]) for k in a)

    def test_wrong_format(self, tmp_path):
        torch.save({"format": "other"}, tmp_path / "x.pt")
        with pytest.raises(CheckpointError):
            load_codec(tmp_path / "x.pt")
        with pytest.raises(CheckpointError):
            load_codec(tmp_path / "missing.pt")
        (tmp_path / "junk.pt").write_bytes(b"junk")
        with pytest.raises(CheckpointError):
            load_codec(tmp_path / "junk.pt")
