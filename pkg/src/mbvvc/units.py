"""Unit-sequence files.

Text form: one line per frame, ``n`` characters of ``0``/``1``.  A binary
archive with the same content (``codes``: uint8 ``[T, n]``) sits next to it.
"""

from pathlib import Path

import numpy as np

from .archive import load_arrays, save_arrays
from .errors import IngestionError

UNIT_VERSION = 1


def codes_to_lines(bits):
    bits = np.asarray(bits)
    if bits.ndim != 2:
        raise ValueError(f"codes must be [T, n], got shape {bits.shape}")
    if not np.isin(bits, (0, 1)).all():
        raise ValueError("codes must be binary")
    return ["".join("1" if b else "0" for b in row) for row in bits]


def write_unit_file(path, bits):
    """Write ``path`` (text) and ``path.with_suffix('.npz')`` (archive)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = codes_to_lines(bits)
    path.write_text("".join(line + "\n" for line in lines))
    save_arrays(path.with_suffix(".npz"), {"codes": np.asarray(bits, dtype=np.uint8)},
                {"format_version": UNIT_VERSION})
    return path


def read_unit_file(path):
    """Return the list of per-frame symbols (bit strings) in a text unit file."""
    path = Path(path)
    try:
        lines = path.read_text().split()
    except OSError as exc:
        raise IngestionError(f"cannot read unit file {path}: {exc}") from exc
    for i, line in enumerate(lines):
        if not line or set(line) - {"0", "1"}:
            raise IngestionError(f"{path}:{i + 1}: not a binary symbol: {line!r}")
    if lines and len({len(l) for l in lines}) != 1:
        raise IngestionError(f"{path}: symbols have inconsistent widths")
    return lines


def read_unit_archive(path):
    arrays, _ = load_arrays(path)
    return arrays["codes"]
