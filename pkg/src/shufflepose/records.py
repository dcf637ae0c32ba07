"""Line-delimited annotation / prediction interchange.

One person box per line, whitespace separated::

    image_id  x y w h  score  x1 y1 v1 ... xK yK vK

Floats are written with ``repr`` so a write/read cycle is lossless.  Blank
lines and ``#`` comments are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Union

import numpy as np

from .errors import DataError


@dataclass
class PersonRecord:
    image_id: int
    box: np.ndarray  # (x, y, w, h)
    score: float
    keypoints: np.ndarray  # (K, 3)

    def to_line(self) -> str:
        fields = [str(self.image_id)] + [repr(float(v)) for v in self.box] + [repr(float(self.score))]
        for x, y, v in self.keypoints:
            fields += [repr(float(x)), repr(float(y)), str(int(v))]
        return " ".join(fields)


def parse_line(line: str, lineno: int = 0) -> PersonRecord:
    parts = line.split()
    if len(parts) < 6 or (len(parts) - 6) % 3:
        raise DataError(f"record line {lineno}: expected 6 + 3K fields, got {len(parts)}")
    try:
        image_id = int(parts[0])
        box = np.array([float(v) for v in parts[1:5]])
        score = float(parts[5])
        kps = np.array([float(v) for v in parts[6:]]).reshape(-1, 3)
    except ValueError as exc:
        raise DataError(f"record line {lineno}: {exc}") from None
    return PersonRecord(image_id, box, score, kps)


def write_records(path: Union[str, Path], records: Iterable[PersonRecord]) -> None:
    Path(path).write_text("".join(r.to_line() + "\n" for r in records), encoding="utf-8")


def read_records(path: Union[str, Path]) -> List[PersonRecord]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read records {path}: {exc}") from None
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if line:
            out.append(parse_line(line, lineno))
    counts = {len(r.keypoints) for r in out}
    if len(counts) > 1:
        raise DataError(f"records in {path} disagree on keypoint count: {sorted(counts)}")
    return out
