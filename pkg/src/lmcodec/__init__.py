"""Low-bitrate speech codec whose decoder is trained against frozen language-model losses."""

__version__ = "0.1.0"
