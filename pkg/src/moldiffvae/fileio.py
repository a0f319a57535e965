"""Atomic file writes and content hashing for run artifacts.

Writes go to a temp file in the destination directory followed by an
atomic rename, so a crashed command never leaves a partial artifact.
"""

from __future__ import annotations

import hashlib
import os
import tempfile


def atomic_write_bytes(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def git_blob_hash(path: str) -> str:
    """Content hash in git's blob format: sha1 over 'blob <len>\\0<bytes>'."""
    with open(path, "rb") as handle:
        data = handle.read()
    digest = hashlib.sha1()
    digest.update(b"blob %d\x00" % len(data))
    digest.update(data)
    return digest.hexdigest()
