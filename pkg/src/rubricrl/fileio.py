"""Small file helpers: atomic writes and JSONL output."""

from __future__ import annotations

import json
import os
import tempfile


def atomic_write_text(path, text: str):
    """Write via a sibling temp file and rename, so readers never see a
    partial file."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def atomic_write_jsonl(path, records: list[dict]):
    atomic_write_text(
        path, "".join(json.dumps(record, sort_keys=True) + "\n" for record in records)
    )
