"""LETOR / SVM-light ranking file parsing and writing.

Line grammar::

    <label> qid:<id> <idx>:<value> ... [# comment]

``label`` is a non-negative integer, ``idx`` a 1-based feature index and
``value`` a finite float (scientific notation allowed). Blank lines are
skipped. Lines of one query need not be contiguous.
"""

import io
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, QueryGroup
from .errors import DimensionMismatch, MalformedLine

_LABEL = re.compile(r"\d+\Z")
_INDEX = re.compile(r"\d+\Z")
_FLOAT = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?\Z")


@dataclass
class RawRecord:
    relevance: int
    query_id: str
    features: dict = field(default_factory=dict)
    comment: str | None = None


def parse_line(line: str, line_no: int = 1) -> RawRecord | None:
    """Parse one line; returns None for blank lines."""
    body, sep, comment = line.partition("#")
    tokens = body.split()
    if not tokens:
        if sep:
            raise MalformedLine(line_no, "comment without a record")
        return None
    label = tokens[0]
    if not _LABEL.match(label):
        raise MalformedLine(line_no, f"missing or invalid label {label!r}")
    if len(tokens) < 2 or not tokens[1].startswith("qid:"):
        raise MalformedLine(line_no, "missing qid:")
    qid = tokens[1][4:]
    if not qid:
        raise MalformedLine(line_no, "empty query id")
    feats = {}
    for tok in tokens[2:]:
        idx, colon, val = tok.partition(":")
        if not colon or not _INDEX.match(idx):
            raise MalformedLine(line_no, f"bad feature token {tok!r}")
        i = int(idx)
        if i <= 0:
            raise MalformedLine(line_no, f"feature index must be >= 1, got {i}")
        if not _FLOAT.match(val):
            raise MalformedLine(line_no, f"non-numeric value in {tok!r}")
        v = float(val)
        if not math.isfinite(v):
            raise MalformedLine(line_no, f"non-finite value in {tok!r}")
        if i in feats:
            raise MalformedLine(line_no, f"duplicate feature index {i}")
        feats[i] = v
    return RawRecord(int(label), qid, feats, comment.strip() if sep else None)


def _lines(source):
    if isinstance(source, (str, bytes)):
        raise TypeError("parse_dataset expects a text stream or iterable of lines, not a string; use parse_text")
    return source


def parse_dataset(source, expected_dims: int | None = None, name: str = "") -> Dataset:
    """Parse a line stream into a Dataset.

    Query groups keep first-appearance order and documents keep file
    order. Missing sparse entries become 0.0; the dense width is
    ``expected_dims`` or the largest index seen.
    """
    order = []
    groups = {}
    max_idx = 0
    for line_no, line in enumerate(_lines(source), start=1):
        rec = parse_line(line, line_no)
        if rec is None:
            continue
        if rec.features:
            top = max(rec.features)
            if expected_dims is not None and top > expected_dims:
                raise DimensionMismatch(f"line {line_no}: feature index {top} exceeds expected {expected_dims}")
            max_idx = max(max_idx, top)
        if rec.query_id not in groups:
            groups[rec.query_id] = []
            order.append(rec.query_id)
        groups[rec.query_id].append(rec)
    dims = expected_dims if expected_dims is not None else max_idx
    queries = []
    for qid in order:
        recs = groups[qid]
        X = np.zeros((len(recs), dims))
        for r, rec in enumerate(recs):
            for i, v in rec.features.items():
                X[r, i - 1] = v
        labels = np.array([rec.relevance for rec in recs], dtype=np.int64)
        comments = tuple(rec.comment for rec in recs)
        if all(c is None for c in comments):
            comments = None
        queries.append(QueryGroup(qid, X, labels, comments))
    return Dataset(queries, dims, name)


def parse_text(text: str, expected_dims: int | None = None, name: str = "") -> Dataset:
    return parse_dataset(io.StringIO(text), expected_dims, name)


def read_dataset(paths, expected_dims: int | None = None, name: str | None = None) -> Dataset:
    """Parse one file, several files (concatenated in order) or a directory.

    A directory is read as LETOR 4.0 ``S1.txt``..``S5.txt`` when present,
    otherwise as ``Fold1/{train,vali,test}.txt``.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(_corpus_files(p))
        else:
            files.append(p)

    def lines():
        for f in files:
            with open(f, encoding="utf-8", errors="replace") as fh:
                yield from fh

    return parse_dataset(lines(), expected_dims, name if name is not None else Path(paths[0]).stem)


def _corpus_files(d: Path):
    folds = [d / f"S{i}.txt" for i in range(1, 6)]
    if all(f.exists() for f in folds):
        return folds
    fold1 = d / "Fold1" if (d / "Fold1").is_dir() else d
    parts = [fold1 / f"{n}.txt" for n in ("train", "vali", "test")]
    if all(f.exists() for f in parts):
        return parts
    raise FileNotFoundError(f"no LETOR corpus layout recognized under {d}")


def format_record(label, qid, features, comment=None) -> str:
    parts = [str(int(label)), f"qid:{qid}"]
    parts.extend(f"{i + 1}:{float(v)!r}" for i, v in enumerate(features))
    line = " ".join(parts)
    if comment is not None:
        line += " # " + comment if comment else " #"
    return line


def write_dataset(dataset: Dataset, sink) -> None:
    """Write every document densely, so the width survives a round trip.

    ``sink`` is a text stream or a filesystem path.
    """
    if isinstance(sink, (str, Path)):
        with open(sink, "w") as fh:
            return write_dataset(dataset, fh)
    for q in dataset.queries:
        comments = q.comments or (None,) * q.n_docs
        for x, y, c in zip(q.features, q.labels, comments):
            sink.write(format_record(y, q.query_id, x, c) + "\n")


def dumps(dataset: Dataset) -> str:
    buf = io.StringIO()
    write_dataset(dataset, buf)
    return buf.getvalue()
