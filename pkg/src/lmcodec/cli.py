"""Command-line entry point. Runs everything in-process.

Every command prints a JSON summary on stdout. Failures print
``{"error", "type", "message"}`` on stderr and exit nonzero.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from lmcodec import pipeline
from lmcodec.audio import load_audio
from lmcodec.config import load_config
from lmcodec.data import import_textgrid
from lmcodec.errors import LMCodecError

EXIT_ERROR = 1
EXIT_USAGE = 2


def _emit(obj) -> None:
    click.echo(json.dumps(obj, indent=2, default=str))


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="YAML run config.")
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
@click.option("--profile", type=click.Choice(["tiny", "paper"]), default=None, help="Codec size profile.")
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def cli(ctx, config_path, seed, profile, verbose):
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = load_config(config_path, seed=seed, profile=profile)


manifest_opt = click.option("--manifest", type=click.Path(exists=True, dir_okay=False), default=None)
steps_opt = click.option("--steps", type=int, default=None, help="Overrides training.max_steps.")
log_opt = click.option("--log", "log_path", type=click.Path(dir_okay=False), default=None, help="JSON-lines training log.")


@cli.command("make-synthetic-corpus")
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--texts", type=int, default=8, help="Training source texts.")
@click.option("--per-text", type=int, default=1)
@click.pass_obj
def make_synthetic_corpus(cfg, out_dir, texts, per_text):
    """Write a small synthetic corpus with train, validation and test texts."""
    from lmcodec.synthetic_corpus import make_synthetic_utterances, write_synthetic_corpus

    sr = cfg.codec_profile().sample_rate
    utts = make_synthetic_utterances(texts, per_text, sr, seed=cfg.seed)
    utts += make_synthetic_utterances(2, per_text, sr, seed=cfg.seed + 1, first_text=25)
    utts += make_synthetic_utterances(2, per_text, sr, seed=cfg.seed + 2, first_text=21)
    manifest = write_synthetic_corpus(out_dir, utts)
    _emit({"manifest": str(manifest), "utterances": len(utts)})


@cli.command("import-alignments")
@click.argument("textgrid", type=click.Path(exists=True, dir_okay=False))
@click.argument("out", type=click.Path(dir_okay=False))
@click.option("--tier", default="words")
def import_alignments(textgrid, out, tier):
    """Convert a forced-aligner TextGrid tier to the tab-separated alignment format."""
    al = import_textgrid(textgrid, out, tier)
    _emit({"out": out, "intervals": len(al)})


@cli.command("pretrain-ttr")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@manifest_opt
@steps_opt
@log_opt
@click.pass_obj
def pretrain_ttr_cmd(cfg, out, manifest, steps, log_path):
    """Pretrain the TTR summarizer and aggregator on clean speech."""
    _emit(pipeline.pretrain_ttr_files(cfg, out, manifest, steps, log_path))


@cli.command("train-stage1")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@manifest_opt
@steps_opt
@log_opt
@click.pass_obj
def train_stage1(cfg, out, manifest, steps, log_path):
    """Encoders, quantizers and feature decoders."""
    _emit(pipeline.train_stage(cfg, 1, out, manifest=manifest, steps=steps, log_path=log_path))


@cli.command("train-stage2")
@click.option("--init", type=click.Path(exists=True, dir_okay=False), required=True, help="Stage-1 checkpoint.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@manifest_opt
@steps_opt
@log_opt
@click.pass_obj
def train_stage2(cfg, init, out, manifest, steps, log_path):
    """Vocoder and discriminators on frozen codes."""
    _emit(pipeline.train_stage(cfg, 2, out, init=init, manifest=manifest, steps=steps, log_path=log_path))


@cli.command("train-stage3")
@click.option("--variant", type=click.Choice(["asr", "ttr", "sd"], case_sensitive=False), default=None)
@click.option("--init", type=click.Path(exists=True, dir_okay=False), required=True, help="Stage-2 checkpoint.")
@click.option("--ttr", type=click.Path(exists=True, dir_okay=False), default=None, help="TTR checkpoint (ttr variant).")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@manifest_opt
@steps_opt
@log_opt
@click.pass_obj
def train_stage3(cfg, variant, init, ttr, out, manifest, steps, log_path):
    """Fine-tune the semantic branch and vocoder with one LM-guided loss."""
    _emit(pipeline.train_stage(cfg, 3, out, variant=variant, init=init, ttr=ttr, manifest=manifest, steps=steps, log_path=log_path))


@cli.command()
@click.argument("wav", type=click.Path(exists=True, dir_okay=False))
@click.argument("bitstream", type=click.Path(dir_okay=False))
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.pass_obj
def encode(cfg, wav, bitstream, checkpoint):
    """Compress a WAV file to a bitstream."""
    _emit(pipeline.encode_file(cfg, checkpoint, wav, bitstream))


@cli.command()
@click.argument("bitstream", type=click.Path(exists=True, dir_okay=False))
@click.argument("wav", type=click.Path(dir_okay=False))
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
def decode(bitstream, wav, checkpoint):
    """Decode a bitstream to a 16-bit WAV file."""
    _emit(pipeline.decode_file(checkpoint, bitstream, wav))


def _parse_codec(value: str) -> tuple[str, str]:
    variant, sep, path = value.partition("=")
    if not sep or not Path(path).exists():
        raise click.BadParameter(f"expected VARIANT=CHECKPOINT with an existing file, got {value!r}")
    return variant, path


@cli.command()
@click.option("--codec", "codecs", multiple=True, help="VARIANT=CHECKPOINT, e.g. TTR=ckpt/ttr.pt. Repeatable.")
@click.option("--asr", "asr", multiple=True, type=click.Choice(["exemplar", "providers"]), default=("exemplar",))
@click.option("--no-reference", is_flag=True, help="Skip the unencoded reference row.")
@click.option("--split", type=click.Choice(["train", "val", "test"]), default="test")
@click.option("--json-out", type=click.Path(dir_okay=False), default=None)
@click.option("--detail", is_flag=True, help="Include per-utterance results in the JSON.")
@manifest_opt
@click.pass_obj
def evaluate(cfg, codecs, asr, no_reference, split, json_out, detail, manifest):
    """WER and quality metrics for each codec; prints a table, writes JSON."""
    pairs = [_parse_codec(c) for c in codecs]
    report = pipeline.evaluate_files(cfg, pairs, manifest, asr, not no_reference, split)
    text = report.to_json(detail)
    if json_out:
        Path(json_out).write_text(text, encoding="utf-8")
    else:
        click.echo(text)
    click.echo(report.to_table())


@cli.command("compare-spectrogram")
@click.argument("reference", type=click.Path(exists=True, dir_okay=False))
@click.argument("out", type=click.Path(dir_okay=False))
@click.option("--decoded", type=click.Path(exists=True, dir_okay=False), default=None, help="Decoded WAV to compare.")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), default=None, help="Resynthesize REFERENCE instead.")
@click.pass_obj
def compare_spectrogram(cfg, reference, out, decoded, checkpoint):
    """Stacked input/decoded spectrograms on a shared color scale."""
    from lmcodec.checkpoint import load_codec
    from lmcodec.evaluation import roundtrip, spectrogram_compare

    if (decoded is None) == (checkpoint is None):
        raise click.UsageError("pass exactly one of --decoded or --checkpoint")
    if checkpoint:
        codec, _ = load_codec(checkpoint)
        x = load_audio(reference, codec.profile.sample_rate)
        x_hat = roundtrip(codec, x, cfg.build_providers(codec.profile))
    else:
        x = load_audio(reference, cfg.codec_profile().sample_rate)
        x_hat = load_audio(decoded, x.sample_rate)
    pair = spectrogram_compare(x, x_hat, out)
    _emit({"image": str(pair.path), "frames": int(pair.times.size), "bins": int(pair.freqs.size)})


def _fail(payload: dict, code: int) -> int:
    click.echo(json.dumps(payload), err=True)
    return code


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="lmcodec", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        return _fail({"error": "aborted", "type": "Abort", "message": "aborted"}, EXIT_ERROR)
    except click.ClickException as exc:
        return _fail({"error": "usage", "type": type(exc).__name__, "message": exc.format_message()}, EXIT_USAGE)
    except LMCodecError as exc:
        return _fail(exc.to_dict(), EXIT_ERROR)
    except (OSError, ValueError, RuntimeError) as exc:
        return _fail({"error": "runtime", "type": type(exc).__name__, "message": str(exc)}, EXIT_ERROR)
    return 0


if __name__ == "__main__":
    sys.exit(main())
