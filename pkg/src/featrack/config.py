"""Project configuration (``featrack.toml``), discovered upward from the working directory.

.. code-block:: toml

    [featrack]
    platform = "platform"
    file_index = "model/file-index.yaml"
    feature_model = "model/feature-model.yaml"
    portfolio = "portfolio.yaml"
    log = "feedback.log"
    collector = "127.0.0.1:8765"
    comment_prefix = "//"
    # template = "model/hit.tpl"

Relative paths are resolved against the directory holding the file.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .annotation import DEFAULT_COMMENT_PREFIX
from .errors import ModelError

CONFIG_NAME = "featrack.toml"
_PATH_KEYS = ("platform", "file_index", "feature_model", "template", "portfolio", "log")


@dataclass(frozen=True)
class ToolConfig:
    base: Path
    platform: Path | None = None
    file_index: Path | None = None
    feature_model: Path | None = None
    template: Path | None = None
    portfolio: Path | None = None
    log: Path | None = None
    collector: str = "127.0.0.1:8765"
    comment_prefix: str = DEFAULT_COMMENT_PREFIX
    source: Path | None = None


def find_config(start: Path | str | None = None) -> Path | None:
    here = Path(start or Path.cwd()).resolve()
    for directory in (here, *here.parents):
        candidate = directory / CONFIG_NAME
        if candidate.is_file():
            return candidate
    return None


def load_config(path: Path | str | None = None, start: Path | str | None = None) -> ToolConfig:
    """Load ``path`` or the nearest ``featrack.toml``; defaults when none exists."""
    path = Path(path) if path is not None else find_config(start)
    if path is None:
        return ToolConfig(base=Path(start or Path.cwd()).resolve())
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ModelError(f"cannot load project config: {exc}", str(path)) from exc
    section = data.get("featrack", data)
    base = path.parent.resolve()
    unknown = set(section) - set(_PATH_KEYS) - {"collector", "comment_prefix"}
    if unknown:
        raise ModelError(f"unknown keys {sorted(unknown)}", str(path))
    values: dict = {}
    for key in _PATH_KEYS:
        if section.get(key):
            values[key] = (base / section[key]).resolve()
    for key in ("collector", "comment_prefix"):
        if key in section:
            values[key] = str(section[key])
    return ToolConfig(base=base, source=path, **values)
