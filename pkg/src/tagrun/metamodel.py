"""Recipe meta schema and configuration merging.

A recipe declares, in its meta document:

* ``default_env``     environment defaults (lowest precedence layer)
* ``input_mapping``   CLI input name -> environment key
* ``deps``            ordered dependencies, each a tag selector plus
                      optional ``enable_if_env`` / ``skip_if_env``
                      conditions, role ``names`` and version bounds
* ``post_deps``       dependencies run after the recipe's own script
* ``variations``      ``_name`` configuration variants contributing env
                      overrides, extra dependencies, extra tags and
                      implied base variations
* ``new_env_keys``    prefixes of environment keys exported on success
* ``cacheable``       whether a successful run is stored in the cache
* ``version_probe``   how to detect the version of the provided tool

Unknown top-level keys are preserved verbatim so that meta documents
written by newer framework versions round-trip unchanged.
"""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field
from typing import Mapping, TYPE_CHECKING

from . import metafile
from .errors import MetaError, QueryError
from .query import Query, normalize_tag, normalize_tags, parse_query

if TYPE_CHECKING:
    from .registry import Artifact

KNOWN_KEYS = {
    "uid", "alias", "tags", "default_env", "input_mapping", "deps",
    "post_deps", "variations", "new_env_keys", "cacheable", "version_probe",
}


@dataclass(frozen=True)
class Dependency:
    """One pipeline step requirement, included when its conditions hold."""

    tags: str
    query: Query
    names: tuple[str, ...] = ()
    enable_if_env: tuple[tuple[str, tuple[str, ...]], ...] = ()
    skip_if_env: tuple[tuple[str, tuple[str, ...]], ...] = ()
    version_min: str | None = None
    version_max: str | None = None


@dataclass(frozen=True)
class VariationSpec:
    env_overrides: tuple[tuple[str, str], ...] = ()
    extra_deps: tuple[Dependency, ...] = ()
    extra_tags: frozenset[str] = frozenset()
    base_variations: tuple[str, ...] = ()


@dataclass(frozen=True)
class VersionProbe:
    command: tuple[str, ...]
    pattern: str
    env_key: str


@dataclass
class ScriptMeta:
    uid: str
    alias: str | None
    tags: frozenset[str]
    default_env: dict[str, str] = field(default_factory=dict)
    input_mapping: dict[str, str] = field(default_factory=dict)
    deps: tuple[Dependency, ...] = ()
    post_deps: tuple[Dependency, ...] = ()
    variations: dict[str, VariationSpec] = field(default_factory=dict)
    new_env_keys: tuple[str, ...] = ()
    cacheable: bool = False
    version_probe: VersionProbe | None = None
    raw: dict = field(default_factory=dict)


@dataclass
class EffectiveMeta:
    """A recipe after its requested variations have been merged in."""

    meta: ScriptMeta
    active_variations: tuple[str, ...]
    env_defaults: dict[str, str]
    env_variation: dict[str, str]
    deps: tuple[Dependency, ...]
    post_deps: tuple[Dependency, ...]
    tags: frozenset[str]

    @property
    def cacheable(self) -> bool:
        return self.meta.cacheable


def _string_map(value, path: str) -> dict[str, str]:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise MetaError(f"{path}: expected a mapping")
    out = {}
    for k, v in value.items():
        if not isinstance(k, str) or not k:
            raise MetaError(f"{path}: invalid key {k!r}")
        out[str(k)] = "" if v is None else str(v)
    return out


def _condition_map(value, path: str) -> tuple[tuple[str, tuple[str, ...]], ...]:
    if value is None:
        return ()
    if not isinstance(value, dict):
        raise MetaError(f"{path}: expected a mapping of env key to values")
    out = []
    for key, accepted in value.items():
        if accepted is None:
            raise MetaError(f"{path}.{key}: value list must not be empty")
        if isinstance(accepted, (str, int, float)):
            accepted = [accepted]
        if not isinstance(accepted, list) or not accepted:
            raise MetaError(f"{path}.{key}: value list must not be empty")
        out.append((str(key), tuple(str(v).strip() for v in accepted)))
    return tuple(out)


def _parse_dep(doc, path: str) -> Dependency:
    if not isinstance(doc, dict):
        raise MetaError(f"{path}: expected a mapping")
    tags = doc.get("tags")
    if not isinstance(tags, str) or not tags.strip():
        raise MetaError(f"{path}.tags: a dependency needs a tag selector")
    try:
        query = parse_query(tags, syntax="comma")
    except QueryError as exc:
        raise MetaError(f"{path}.tags: {exc}") from exc
    names = doc.get("names") or []
    if isinstance(names, str):
        names = [names]
    return Dependency(
        tags=tags.strip(),
        query=query,
        names=tuple(str(n).strip() for n in names),
        enable_if_env=_condition_map(doc.get("enable_if_env"),
                                     f"{path}.enable_if_env"),
        skip_if_env=_condition_map(doc.get("skip_if_env"),
                                   f"{path}.skip_if_env"),
        version_min=doc.get("version_min"),
        version_max=doc.get("version_max"),
    )


def _parse_deps(value, path: str) -> tuple[Dependency, ...]:
    if value is None:
        return ()
    if not isinstance(value, list):
        raise MetaError(f"{path}: expected a list of dependencies")
    return tuple(_parse_dep(d, f"{path}[{i}]") for i, d in enumerate(value))


def _parse_tags_field(value, path: str) -> frozenset[str]:
    if value is None:
        return frozenset()
    if isinstance(value, str):
        value = [t for t in value.split(",") if t.strip()]
    if not isinstance(value, list):
        raise MetaError(f"{path}: expected a list or comma-separated string")
    try:
        return normalize_tags(value, allow_variation_prefix=True)
    except QueryError as exc:
        raise MetaError(f"{path}: {exc}") from exc


def _parse_variation(name: str, doc, path: str) -> VariationSpec:
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise MetaError(f"{path}: expected a mapping")
    base = doc.get("base") or []
    if isinstance(base, str):
        base = [base]
    return VariationSpec(
        env_overrides=tuple(_string_map(doc.get("env"), f"{path}.env").items()),
        extra_deps=_parse_deps(doc.get("deps"), f"{path}.deps"),
        extra_tags=_parse_tags_field(doc.get("extra_tags"),
                                     f"{path}.extra_tags"),
        base_variations=tuple(normalize_tag(b) for b in base),
    )


def _parse_variations(value, path: str) -> dict[str, VariationSpec]:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise MetaError(f"{path}: expected a mapping of variation names")
    out: dict[str, VariationSpec] = {}
    for name, doc in value.items():
        if not isinstance(name, str) or not name.strip():
            raise MetaError(f"{path}: variation names must be non-empty")
        norm = normalize_tag(name)
        if norm in out:
            raise MetaError(f"{path}.{name}: duplicate variation name")
        out[norm] = _parse_variation(norm, doc, f"{path}.{name}")
    return out


def _check_variation_cycles(variations: dict[str, VariationSpec]) -> None:
    """Reject cyclic ``base`` chains; reports the cycle path."""
    VISITING, DONE = 1, 2
    state: dict[str, int] = {}

    def visit(name: str, trail: list[str]) -> None:
        if state.get(name) == DONE:
            return
        if state.get(name) == VISITING:
            cycle = trail[trail.index(name):] + [name]
            raise MetaError("variation base cycle: " + " -> ".join(cycle))
        if name not in variations:
            raise MetaError(f"variations.{trail[-1]}: unknown base "
                            f"variation {name!r}")
        state[name] = VISITING
        for base in variations[name].base_variations:
            visit(base, trail + [name])
        state[name] = DONE

    for name in variations:
        visit(name, [])


def _parse_version_probe(value, path: str) -> VersionProbe | None:
    if value is None:
        return None
    if not isinstance(value, dict):
        raise MetaError(f"{path}: expected a mapping")
    command = value.get("command")
    if isinstance(command, str):
        command = command.split()
    if not isinstance(command, list) or not command:
        raise MetaError(f"{path}.command: expected a non-empty argv list")
    pattern = value.get("pattern")
    if not isinstance(pattern, str) or not pattern:
        raise MetaError(f"{path}.pattern: expected a capture pattern")
    try:
        compiled = re.compile(pattern)
    except re.error as exc:
        raise MetaError(f"{path}.pattern: {exc}") from exc
    if compiled.groups < 1:
        raise MetaError(f"{path}.pattern: needs one capture group for the "
                        "dotted version")
    env_key = value.get("env_key")
    if not isinstance(env_key, str) or not env_key:
        raise MetaError(f"{path}.env_key: expected an env key name")
    return VersionProbe(command=tuple(str(c) for c in command),
                        pattern=pattern, env_key=env_key)


def parse_script_meta(doc: dict, *, where: str = "meta") -> ScriptMeta:
    uid = doc.get("uid")
    if not isinstance(uid, str):
        raise MetaError(f"{where}.uid: missing or not a string")
    alias = doc.get("alias")
    tags = _parse_tags_field(doc.get("tags"), f"{where}.tags")
    if not tags:
        raise MetaError(f"{where}.tags: scripts must declare at least one tag")
    variations = _parse_variations(doc.get("variations"),
                                   f"{where}.variations")
    _check_variation_cycles(variations)
    new_env_keys = doc.get("new_env_keys") or []
    if isinstance(new_env_keys, str):
        new_env_keys = [new_env_keys]
    for prefix in new_env_keys:
        if not str(prefix).strip():
            raise MetaError(f"{where}.new_env_keys: empty prefix")
    cacheable = doc.get("cacheable", False)
    return ScriptMeta(
        uid=uid,
        alias=alias,
        tags=tags,
        default_env=_string_map(doc.get("default_env"),
                                f"{where}.default_env"),
        input_mapping=_string_map(doc.get("input_mapping"),
                                  f"{where}.input_mapping"),
        deps=_parse_deps(doc.get("deps"), f"{where}.deps"),
        post_deps=_parse_deps(doc.get("post_deps"), f"{where}.post_deps"),
        variations=variations,
        new_env_keys=tuple(str(p).strip() for p in new_env_keys),
        cacheable=metafile.coerce_bool(cacheable, f"{where}.cacheable"),
        version_probe=_parse_version_probe(doc.get("version_probe"),
                                           f"{where}.version_probe"),
        raw=copy.deepcopy(doc),
    )


def load_meta(artifact: "Artifact") -> ScriptMeta:
    """Load and validate the recipe declaration of a script artifact."""
    doc = metafile.read_meta_dir(artifact.path)
    return parse_script_meta(doc, where=str(artifact.path))


def serialize_meta(meta: ScriptMeta) -> dict:
    """Round-trip form: the original document with core identity fields
    normalized. Unknown keys come back untouched."""
    doc = copy.deepcopy(meta.raw)
    doc["uid"] = meta.uid
    doc["alias"] = meta.alias
    doc["tags"] = sorted(meta.tags)
    return doc


def evaluate_condition(dep: Dependency, env: Mapping[str, str]) -> bool:
    """Should this dependency be part of the pipeline under ``env``?

    ``enable_if_env`` passes only if every listed key is present with an
    accepted value (vacuously true when absent).  ``skip_if_env`` fires
    only if every listed key is present with a rejected value.  Values
    compare as trimmed strings.
    """
    def holds(conditions) -> bool:
        for key, values in conditions:
            actual = env.get(key)
            if actual is None or str(actual).strip() not in values:
                return False
        return True

    enable_pass = holds(dep.enable_if_env)
    skip_hit = bool(dep.skip_if_env) and holds(dep.skip_if_env)
    return enable_pass and not skip_hit


def variation_closure(meta: ScriptMeta,
                      requested: tuple[str, ...] | list[str]) -> tuple[str, ...]:
    """Expand implied base variations, keeping request order.

    Bases come before the variation that implies them so the implying
    variation's env overrides win; repeated names keep their first
    position.  Applying the closure to its own output is a no-op.
    """
    active: list[str] = []

    def visit(name: str) -> None:
        if name not in meta.variations:
            available = ", ".join(sorted(meta.variations)) or "(none)"
            raise MetaError(f"unknown variation _{name}; available: "
                            f"{available}")
        for base in meta.variations[name].base_variations:
            visit(base)
        if name not in active:
            active.append(name)

    for name in requested:
        visit(normalize_tag(name))
    return tuple(active)


def apply_variations(meta: ScriptMeta,
                     requested: tuple[str, ...] | list[str]) -> EffectiveMeta:
    """Overlay the requested variations onto the recipe defaults."""
    active = variation_closure(meta, tuple(requested))
    env_variation: dict[str, str] = {}
    extra_deps: list[Dependency] = []
    tags = set(meta.tags)
    for name in active:
        spec = meta.variations[name]
        env_variation.update(dict(spec.env_overrides))
        extra_deps.extend(spec.extra_deps)
        tags.update(spec.extra_tags)
        tags.add(f"_{name}")
    return EffectiveMeta(
        meta=meta,
        active_variations=active,
        env_defaults=dict(meta.default_env),
        env_variation=env_variation,
        deps=meta.deps + tuple(extra_deps),
        post_deps=meta.post_deps,
        tags=frozenset(tags),
    )
