"""Corpus ingestion: alignments, manifests, splits and long training segments."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from itertools import groupby
from pathlib import Path

from lmcodec.audio import AudioClip, concatenate, load_audio
from lmcodec.errors import AlignmentError, CorpusError

logger = logging.getLogger(__name__)

LJ_TEST_PREFIXES = ("LJ021", "LJ022", "LJ023", "LJ024")
LJ_VAL_PREFIXES = ("LJ025", "LJ026", "LJ027")


@dataclass(frozen=True)
class SubwordAlignment:
    token: str
    start_s: float
    end_s: float
    utterance_id: str = ""

    def __post_init__(self):
        if not (0.0 <= self.start_s < self.end_s):
            raise AlignmentError(
                f"invalid interval ({self.start_s}, {self.end_s}) for token {self.token!r}"
            )

    def shifted(self, offset_s: float, utterance_id: str | None = None) -> "SubwordAlignment":
        return SubwordAlignment(
            self.token,
            self.start_s + offset_s,
            self.end_s + offset_s,
            self.utterance_id if utterance_id is None else utterance_id,
        )


def check_alignments(alignments: list[SubwordAlignment]) -> None:
    """Raise unless ``alignments`` are time-ordered and non-overlapping."""
    for prev, cur in zip(alignments, alignments[1:]):
        if cur.start_s < prev.end_s:
            raise AlignmentError(
                f"overlapping intervals {prev.token!r} ({prev.start_s}, {prev.end_s}) "
                f"and {cur.token!r} ({cur.start_s}, {cur.end_s})"
            )


def parse_alignment(path, utterance_id: str | None = None) -> list[SubwordAlignment]:
    """Read a ``token<TAB>start<TAB>end`` interval file.

    Blank lines and lines starting with ``#`` are skipped. Tokens are
    lowercased; intervals are returned sorted by start time.

    Raises:
        AlignmentError: unparseable lines, reversed or overlapping intervals.
    """
    path = Path(path)
    uid = utterance_id if utterance_id is not None else path.stem
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise AlignmentError(f"cannot read {path}: {exc}") from exc
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.rstrip("\r\n").split("\t")
        if len(parts) != 3:
            raise AlignmentError(f"{path}:{lineno}: expected 3 tab-separated fields")
        token, start, end = parts
        try:
            start_s, end_s = float(start), float(end)
        except ValueError as exc:
            raise AlignmentError(f"{path}:{lineno}: bad time value") from exc
        if not token.strip():
            raise AlignmentError(f"{path}:{lineno}: empty token")
        out.append(SubwordAlignment(token.strip().lower(), start_s, end_s, uid))
    out.sort(key=lambda a: a.start_s)
    check_alignments(out)
    return out


def write_alignment(alignments: list[SubwordAlignment], path) -> None:
    lines = [f"{a.token}\t{a.start_s:.3f}\t{a.end_s:.3f}" for a in alignments]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


_TG_TIER = re.compile(r'^\s*name\s*=\s*"(.*)"\s*$')
_TG_FIELD = re.compile(r"^\s*(xmin|xmax|text)\s*=\s*(.*?)\s*$")


def read_textgrid_intervals(path, tier: str = "words") -> list[tuple[str, float, float]]:
    """Extract labelled intervals of one tier from a long-format TextGrid."""
    lines = Path(path).read_text(encoding="utf-8-sig").splitlines()
    intervals = []
    current_tier = None
    pending: dict = {}
    in_interval = False
    for line in lines:
        m = _TG_TIER.match(line)
        if m:
            current_tier = m.group(1)
            in_interval = False
            continue
        if current_tier != tier:
            continue
        if re.match(r"^\s*intervals\s*\[\d+\]", line):
            in_interval = True
            pending = {}
            continue
        if not in_interval:
            continue
        m = _TG_FIELD.match(line)
        if not m:
            continue
        key, value = m.groups()
        pending[key] = value.strip('"') if key == "text" else float(value)
        if key == "text":
            if pending["text"].strip():
                intervals.append((pending["text"].strip(), pending["xmin"], pending["xmax"]))
            in_interval = False
    if current_tier is None:
        raise AlignmentError(f"{path}: no tiers found")
    return intervals


def import_textgrid(path, out_path, tier: str = "words") -> list[SubwordAlignment]:
    """Convert a TextGrid interval tier to the tab-separated interval format."""
    try:
        raw = read_textgrid_intervals(path, tier)
    except (OSError, KeyError, ValueError) as exc:
        if isinstance(exc, AlignmentError):
            raise
        raise AlignmentError(f"cannot parse TextGrid {path}: {exc}") from exc
    uid = Path(path).stem
    alignments = sorted(
        (SubwordAlignment(tok.lower(), s, e, uid) for tok, s, e in raw), key=lambda a: a.start_s
    )
    check_alignments(alignments)
    write_alignment(alignments, out_path)
    return alignments


def split_corpus(
    utterance_ids,
    test_prefixes=LJ_TEST_PREFIXES,
    val_prefixes=LJ_VAL_PREFIXES,
) -> dict[str, list[str]]:
    """Partition ids by source-text prefix into train/val/test.

    Input order is preserved inside each partition.
    """
    test_prefixes, val_prefixes = tuple(test_prefixes), tuple(val_prefixes)
    for t in test_prefixes:
        for v in val_prefixes:
            if t.startswith(v) or v.startswith(t):
                raise CorpusError(f"test prefix {t!r} overlaps validation prefix {v!r}")
    parts = {"train": [], "val": [], "test": []}
    for uid in utterance_ids:
        in_test = uid.startswith(test_prefixes) if test_prefixes else False
        in_val = uid.startswith(val_prefixes) if val_prefixes else False
        if in_test and in_val:
            raise CorpusError(f"{uid!r} matches both test and validation prefixes")
        parts["test" if in_test else "val" if in_val else "train"].append(uid)
    return parts


@dataclass
class Utterance:
    id: str
    clip: AudioClip
    text: str
    alignments: list[SubwordAlignment]
    source_text_id: str
    order_index: int

    @property
    def duration_s(self) -> float:
        return self.clip.duration_s


@dataclass
class TrainingSegment:
    clip: AudioClip
    alignments: list[SubwordAlignment]
    source_text_id: str
    duration_s: float
    utterance_ids: list[str] = field(default_factory=list)
    text: str = ""
    oversize: bool = False

    @property
    def script(self) -> list[str]:
        return [a.token for a in self.alignments]


def _make_segment(group: list[Utterance], max_s: float) -> TrainingSegment:
    alignments = []
    offset = 0.0
    for utt in group:
        alignments.extend(a.shifted(offset) for a in utt.alignments)
        offset += utt.duration_s
    clip = concatenate([u.clip for u in group])
    oversize = len(group) == 1 and clip.duration_s > max_s
    if oversize:
        logger.warning("utterance %s is %.2f s, longer than %.1f s", group[0].id, clip.duration_s, max_s)
    return TrainingSegment(
        clip=clip,
        alignments=alignments,
        source_text_id=group[0].source_text_id,
        duration_s=clip.duration_s,
        utterance_ids=[u.id for u in group],
        text=" ".join(u.text for u in group),
        oversize=oversize,
    )


def plan_segments(durations: list[float], min_s: float = 30.0, max_s: float = 45.0) -> list[list[int]]:
    """Greedy grouping of consecutive utterance indices for one source text.

    A group closes as soon as it reaches ``min_s``, or when the next
    utterance would push it past ``max_s``. Groups that close short of
    ``min_s`` with more than one utterance are split back into singletons,
    so every multi-utterance group lies in ``[min_s, max_s]``.
    """
    groups: list[list[int]] = []

    def flush(group, total):
        if len(group) > 1 and total < min_s:
            groups.extend([i] for i in group)
        elif group:
            groups.append(group)

    group, total = [], 0.0
    for i, d in enumerate(durations):
        if group and total + d > max_s:
            flush(group, total)
            group, total = [], 0.0
        group.append(i)
        total += d
        if total >= min_s:
            flush(group, total)
            group, total = [], 0.0
    flush(group, total)
    return groups


def build_segments(
    utterances: list[Utterance], min_s: float = 30.0, max_s: float = 45.0
) -> list[TrainingSegment]:
    """Concatenate consecutive utterances of each source text into long segments.

    Utterances are grouped by ``source_text_id`` and ordered by
    ``order_index``. Concatenation inserts no gap; alignments are re-offset
    to segment time.
    """
    ordered = sorted(utterances, key=lambda u: (u.source_text_id, u.order_index))
    segments = []
    for _, text_utts in groupby(ordered, key=lambda u: u.source_text_id):
        text_utts = list(text_utts)
        for idx in plan_segments([u.duration_s for u in text_utts], min_s, max_s):
            segments.append(_make_segment([text_utts[i] for i in idx], max_s))
    starts = [s.utterance_ids[0] for s in segments]
    if len(set(starts)) != len(starts):
        raise CorpusError("duplicate utterance ids in corpus")
    return segments


MANIFEST_FIELDS = ("id", "audio_path", "text", "alignment_path", "source_text_id", "order_index")


def read_manifest(path) -> list[dict]:
    """Read a JSON-lines manifest; relative paths resolve against its directory."""
    path = Path(path)
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        missing = [k for k in MANIFEST_FIELDS if k not in rec]
        if missing:
            raise CorpusError(f"{path}:{lineno}: missing fields {missing}")
        for key in ("audio_path", "alignment_path"):
            p = Path(rec[key])
            rec[key] = str(p if p.is_absolute() else path.parent / p)
        records.append(rec)
    return records


def write_manifest(records: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps({k: rec[k] for k in MANIFEST_FIELDS}) + "\n")


def load_utterances(manifest_path, sample_rate: int) -> list[Utterance]:
    return [
        Utterance(
            id=rec["id"],
            clip=load_audio(rec["audio_path"], sample_rate),
            text=rec["text"],
            alignments=parse_alignment(rec["alignment_path"], rec["id"]),
            source_text_id=rec["source_text_id"],
            order_index=int(rec["order_index"]),
        )
        for rec in read_manifest(manifest_path)
    ]
