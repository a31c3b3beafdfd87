"""Atomic file writing and canonical JSON helpers.

Every artifact writer in the package goes through these functions so that
reruns with the same inputs produce byte-identical files and a crashed
write never leaves a half-finished artifact behind.
"""

import json
import os
import tempfile
from pathlib import Path


def dump_json(obj) -> str:
    """Serialize to the canonical JSON form used for all artifacts."""
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def write_text_atomic(path, text: str) -> None:
    """Write text to path via a temp file and rename in the same directory."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=target.parent, prefix=target.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp_name, target)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def write_json_atomic(path, obj) -> None:
    write_text_atomic(path, dump_json(obj))
