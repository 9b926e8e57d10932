"""Single-file checkpoint container: a zip holding a flat named-parameter
map (.npy members) and a JSON configuration snapshot, tagged
``trinity-ckpt-v1``.

Writing is byte-deterministic: members are stored uncompressed in sorted
order with a fixed timestamp, so identical parameters and config produce
identical files.
"""

from __future__ import annotations

import io
import json
import os
import zipfile
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ValidationError

FORMAT_TAG = "trinity-ckpt-v1"
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _member(archive: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.external_attr = 0o644 << 16
    archive.writestr(info, payload)


def save_checkpoint(
    path: str | os.PathLike, params: Mapping[str, np.ndarray], config: Mapping
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        _member(zf, "format", FORMAT_TAG.encode())
        _member(zf, "config.json", json.dumps(config, sort_keys=True, indent=2).encode())
        for name in sorted(params):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(params[name]))
            _member(zf, f"params/{name}.npy", buf.getvalue())


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            names = set(zf.namelist())
            if "format" not in names or zf.read("format").decode() != FORMAT_TAG:
                raise ValidationError(f"{path} is not a {FORMAT_TAG} checkpoint")
            config = json.loads(zf.read("config.json"))
            params: dict[str, np.ndarray] = {}
            for name in sorted(names):
                if name.startswith("params/") and name.endswith(".npy"):
                    key = name[len("params/") : -len(".npy")]
                    params[key] = np.lib.format.read_array(io.BytesIO(zf.read(name)))
    except zipfile.BadZipFile as exc:
        raise ValidationError(f"{path} is not a {FORMAT_TAG} checkpoint: {exc}") from exc
    return params, config
