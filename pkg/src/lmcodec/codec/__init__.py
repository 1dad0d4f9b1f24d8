from lmcodec.codec.bitstream import (
    CodeStream,
    bitrate,
    bits_per_index,
    pack_bitstream,
    packed_bitrate,
    unpack_bitstream,
)
from lmcodec.codec.model import (
    CODEC_GROUPS,
    Codec,
    decode_semantic_features,
    decode_waveform,
    encode_semantic,
    mel_l1,
    reconstruction_losses,
)
from lmcodec.codec.quantizer import (
    Codebook,
    VectorQuantizer,
    ema_update,
    nearest_indices,
    quantize,
    reinit_dead_codes,
)

__all__ = [
    "CODEC_GROUPS",
    "CodeStream",
    "Codebook",
    "Codec",
    "VectorQuantizer",
    "bitrate",
    "bits_per_index",
    "decode_semantic_features",
    "decode_waveform",
    "ema_update",
    "encode_semantic",
    "mel_l1",
    "nearest_indices",
    "pack_bitstream",
    "packed_bitrate",
    "quantize",
    "reconstruction_losses",
    "reinit_dead_codes",
    "unpack_bitstream",
]
