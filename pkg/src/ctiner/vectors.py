"""Plain-text word vector files: one ``word v1 v2 ... vD`` line per word."""
from __future__ import annotations

from pathlib import Path

import numpy as np

__all__ = ["read_vector_file", "write_vector_file"]


def write_vector_file(path: str | Path, words: list[str], matrix: np.ndarray) -> None:
    """Write word vectors. Floats use full repr so reads are bit-exact."""
    if len(words) != matrix.shape[0]:
        raise ValueError(f"{len(words)} words vs {matrix.shape[0]} rows")
    with Path(path).open("w", encoding="utf-8") as fh:
        for word, row in zip(words, matrix):
            fh.write(word + " " + " ".join(repr(float(v)) for v in row) + "\n")


def read_vector_file(
    path: str | Path, expected_dim: int | None = None
) -> tuple[list[str], np.ndarray]:
    """Read a vector file, returning (words, float64 matrix)."""
    words: list[str] = []
    rows: list[list[float]] = []
    dim = expected_dim
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            # some released files carry a "count dim" header; skip it
            if lineno == 1 and len(parts) == 2 and parts[0].isdigit():
                continue
            vec = [float(v) for v in parts[1:]]
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise ValueError(
                    f"{path}:{lineno}: expected {dim} components, got {len(vec)}"
                )
            words.append(parts[0])
            rows.append(vec)
    if not words:
        raise ValueError(f"no vectors in {path}")
    return words, np.asarray(rows, dtype=np.float64)
