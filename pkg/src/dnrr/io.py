"""Plain-text file formats: trajectory CSV with ``#`` metadata header, and columnar CSV tables."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .dynamics import Trajectory

FORMAT_TAG = "dnrr-trajectory v1"


class ParseError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path, self.line = path, line


def fmt(v: float) -> str:
    # 17 significant digits round-trip every double exactly
    return format(float(v), ".17g")


def write_trajectory(path, traj: Trajectory) -> Path:
    path = Path(path)
    lines = [f"# {FORMAT_TAG}",
             f"# initial: {json.dumps([float(v) for v in traj.initial])}",
             f"# n: {traj.n}"]
    for key in sorted(traj.meta):
        lines.append(f"# {key}: {json.dumps(traj.meta[key], sort_keys=True)}")
    lines.extend(fmt(v) for v in traj.values)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_trajectory(path, lag: int | None = None) -> Trajectory:
    """Parse a trajectory file.

    Without an ``initial`` header the first ``lag`` values become the initial
    block (newest first) and the remainder the series.
    """
    path = Path(path)
    meta, values, initial = {}, [], None
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body == FORMAT_TAG or ":" not in body:
                    continue
                key, _, val = body.partition(":")
                try:
                    parsed = json.loads(val)
                except json.JSONDecodeError as exc:
                    raise ParseError(path, lineno, f"bad metadata value for {key.strip()!r}") from exc
                if key.strip() == "initial":
                    initial = parsed
                elif key.strip() != "n":
                    meta[key.strip()] = parsed
                continue
            try:
                values.append(float(line))
            except ValueError:
                raise ParseError(path, lineno, f"not a number: {line!r}") from None
    if initial is None:
        if lag is None:
            raise ParseError(path, 1, "no initial block in header and no lag given")
        if len(values) < lag:
            raise ParseError(path, 1, f"need at least {lag} values for the initial block")
        initial = values[:lag][::-1]
        values = values[lag:]
    if lag is not None and len(initial) != lag:
        raise ParseError(path, 1, f"initial block has length {len(initial)}, expected lag {lag}")
    return Trajectory(np.array(values), np.array(initial, dtype=float), meta)


def write_matrix_csv(path, matrix, header) -> Path:
    path = Path(path)
    arr = np.asarray(matrix)
    if arr.ndim == 1:
        arr = arr[:, None]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in arr:
            w.writerow([fmt(v) for v in row])
    return path


def read_matrix_csv(path):
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(path, 1, "empty table")
    header = rows[0]
    parsed = []
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise ParseError(path, lineno, f"expected {len(header)} cells, got {len(r)}")
        try:
            parsed.append([float(v) for v in r])
        except ValueError:
            raise ParseError(path, lineno, f"non-numeric cell in {r!r}") from None
    data = np.array(parsed, dtype=float)
    return data.reshape(len(rows) - 1, len(header)), header


def write_records_csv(path, records: list[dict]) -> Path:
    path = Path(path)
    if not records:
        path.write_text("")
        return path
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(records[0]))
        w.writeheader()
        for r in records:
            w.writerow({k: fmt(v) if isinstance(v, (float, np.floating)) else v for k, v in r.items()})
    return path
