"""Byte-deterministic named-array archives.

``numpy.savez`` stamps every member with the wall-clock time, so two runs
that produce identical arrays still produce different files.  The writer
here pins the zip timestamps and member order, which lets checkpoints and
unit archives be compared byte for byte.  Files remain readable with
``numpy.load``.
"""

import io
import json
import zipfile
from pathlib import Path

import numpy as np

_EPOCH = (1980, 1, 1, 0, 0, 0)
META_KEY = "__meta__"


def save_arrays(path, arrays, meta=None):
    """Write ``arrays`` (name -> ndarray) plus a JSON ``meta`` dict to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=_EPOCH), buf.getvalue())
        if meta is not None:
            text = json.dumps(meta, sort_keys=True, separators=(",", ":"))
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.array(text), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(META_KEY + ".npy", date_time=_EPOCH), buf.getvalue())
    tmp.replace(path)
    return path


def load_arrays(path):
    """Return ``(arrays, meta)`` from an archive written by :func:`save_arrays`."""
    with np.load(path, allow_pickle=False) as data:
        arrays = {k: data[k] for k in data.files if k != META_KEY}
        meta = json.loads(str(data[META_KEY])) if META_KEY in data.files else None
    return arrays, meta
