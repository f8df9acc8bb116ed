"""CSV export and run manifests.  CSV files are the source of truth for all
figures; SVGs are derived views.  Every command writes a manifest recording
the tool version, the config snapshot, content hashes of its inputs, the
output file list, and wall-clock timings, so results can be regenerated."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

TOOL_VERSION = "0.1.0"


def write_text_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def write_csv(path: str | Path, header: Sequence[str], rows) -> None:
    write_text_atomic(path, csv_text(header, rows))


def write_matrix_csv(
    path: str | Path,
    matrix: np.ndarray,
    row_labels: Sequence[str],
    col_labels: Sequence[str],
) -> None:
    matrix = np.asarray(matrix)
    header = ["", *col_labels]
    rows = []
    for label, row in zip(row_labels, matrix):
        rows.append([label, *("" if not np.isfinite(v) else f"{v:.8g}" for v in row)])
    write_csv(path, header, rows)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    tool_version: str = TOOL_VERSION
    input_hashes: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    timings_s: dict = field(default_factory=dict)

    def add_input(self, path: str | Path) -> None:
        self.input_hashes[str(path)] = sha256_file(path)

    def add_output(self, path: str | Path) -> None:
        self.outputs.append(str(path))

    def write(self, path: str | Path) -> None:
        payload = {
            "tool_version": self.tool_version,
            "command": self.command,
            "config": self.config,
            "input_hashes": self.input_hashes,
            "outputs": sorted(self.outputs),
            "timings_s": self.timings_s,
        }
        write_text_atomic(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


class Stopwatch:
    """Accumulates named wall-clock phases for the manifest."""

    def __init__(self) -> None:
        self._t0 = time.perf_counter()
        self.laps: dict[str, float] = {}

    def lap(self, name: str) -> None:
        now = time.perf_counter()
        self.laps[name] = round(now - self._t0, 4)
        self._t0 = now
