"""Atomic file writes and small JSON helpers."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np


def atomic_write_text(path, text: str) -> None:
    """Write to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def load_matrix(path) -> np.ndarray:
    """A d x L matrix stored as a JSON nested list (rows = features)."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    M = np.asarray(data, dtype=np.float64)
    if M.ndim == 1:
        M = M[:, None]
    if M.ndim != 2 or M.size == 0:
        raise ValueError(f"{path}: expected a non-empty 2-D nested list")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{path}: non-finite entries")
    return M
