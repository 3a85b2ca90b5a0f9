"""Reading and writing artifact meta documents.

Meta documents are accepted in YAML or JSON with identical field names.
An artifact directory must contain exactly one of ``_meta.yaml`` or
``_meta.json``; a repository root must contain exactly one of
``_repo.yaml`` / ``_repo.json``.

YAML is parsed with implicit scalar resolution for booleans, integers,
floats and timestamps disabled: condition values such as ``yes`` and
version strings such as ``3.10`` must survive as the literal strings the
author wrote.  Fields that really are booleans (``cacheable``) are coerced
explicitly by the schema layer.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import yaml

from .errors import MetaError

META_STEMS = ("_meta.yaml", "_meta.json")
REPO_STEMS = ("_repo.yaml", "_repo.json")


class _StringScalarLoader(yaml.SafeLoader):
    """SafeLoader that keeps bool/int/float/timestamp scalars as strings."""


for _tag in ("bool", "int", "float", "timestamp"):
    _StringScalarLoader.add_constructor(
        f"tag:yaml.org,2002:{_tag}",
        lambda loader, node: loader.construct_scalar(node),
    )


def load_yaml_text(text: str):
    return yaml.load(text, Loader=_StringScalarLoader)


def _find_single(directory: Path, names: tuple[str, ...], what: str) -> Path:
    present = [directory / n for n in names if (directory / n).is_file()]
    if not present:
        raise MetaError(f"{what} file missing in {directory} "
                        f"(expected one of {', '.join(names)})")
    if len(present) > 1:
        raise MetaError(f"{what} is ambiguous in {directory}: both "
                        f"{' and '.join(p.name for p in present)} exist")
    return present[0]


def _load_doc(path: Path) -> dict:
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix == ".json":
            doc = json.loads(text)
        else:
            doc = load_yaml_text(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise MetaError(f"cannot parse {path}: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise MetaError(f"{path} must contain a mapping at top level")
    return doc


def read_meta_dir(directory: Path) -> dict:
    """Load the single meta document of an artifact directory."""
    return _load_doc(_find_single(directory, META_STEMS, "artifact meta"))


def read_repo_descriptor(root: Path) -> dict:
    """Load the single repository descriptor at a repo root."""
    return _load_doc(_find_single(root, REPO_STEMS, "repository descriptor"))


def has_repo_descriptor(root: Path) -> bool:
    return any((root / n).is_file() for n in REPO_STEMS)


def atomic_write(path: Path, text: str) -> None:
    """Write via rename so readers never observe a torn file."""
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_meta_yaml(directory: Path, doc: dict) -> Path:
    path = directory / "_meta.yaml"
    atomic_write(path, yaml.safe_dump(doc, sort_keys=True))
    return path


def write_meta_json(directory: Path, doc: dict) -> Path:
    path = directory / "_meta.json"
    atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def coerce_bool(value, field: str) -> bool:
    """Explicit boolean coercion for meta fields (YAML scalars stay strings)."""
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        lowered = value.strip().lower()
        if lowered in ("true", "yes", "on", "1"):
            return True
        if lowered in ("false", "no", "off", "0"):
            return False
    raise MetaError(f"{field}: expected a boolean, got {value!r}")
