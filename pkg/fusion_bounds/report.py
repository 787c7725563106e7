"""Machine-readable JSON report documents."""

from __future__ import annotations

import json
import sys
from importlib.metadata import PackageNotFoundError, version
from typing import Any, Dict, Mapping, Optional

from .utils import jsonable, logger

DIST_NAME = "fusion-bounds"


def tool_version() -> str:
    try:
        return version(DIST_NAME)
    except PackageNotFoundError:
        return "0+unknown"


def build_report(
    command: str, config: Mapping[str, Any], seeds: Mapping[str, int], result: Any
) -> Dict[str, Any]:
    return {
        "tool": {"name": DIST_NAME, "version": tool_version()},
        "command": command,
        "config": dict(config),
        "seeds": dict(seeds),
        "result": result,
    }


def render(doc: Mapping[str, Any]) -> str:
    """Sorted keys, two-space indent, non-finite floats as null."""
    return json.dumps(jsonable(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_report(doc: Mapping[str, Any], out: Optional[str] = None) -> None:
    text = render(doc)
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    with open(out, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    logger.info("report written to %s", out)
