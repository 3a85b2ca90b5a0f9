"""Recipe resolution and execution.

``Runner.run`` drives one invocation end to end:

1. resolve the selector to exactly one recipe and merge its variations;
2. cacheable recipes probe the cache first — a hit returns the stored
   environment snapshot and runs nothing at all;
3. dependencies execute recursively in declaration order, each one's
   exported environment feeding the next;
4. the version probe runs (once per recipe per invocation) and version
   gates are enforced;
5. the preprocess hook, the platform script (``run.sh`` on linux/macos,
   ``run.bat`` on windows) and the postprocess hook run in a private
   workspace with the merged environment;
6. environment additions are filtered by the recipe's declared
   ``new_env_keys`` prefixes and, for cacheable recipes, stored in the
   cache together with the workspace payload.

``Runner.plan`` performs the same resolution without executing anything;
the generated plan backs the cache key digest and report generation.
"""

from __future__ import annotations

import hashlib
import json
import os
import platform as platform_mod
import re
import shutil
import ssl
import subprocess
import sys
import tempfile
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

from . import cache as cache_mod
from . import metamodel
from .errors import (
    ChecksumError,
    CycleError,
    DownloadError,
    HookFailure,
    HookProtocolError,
    InputError,
    PortabilityError,
    SubprocessError,
    VersionError,
    VersionGateError,
)
from .metamodel import Dependency, EffectiveMeta, ScriptMeta
from .query import Query, select_unique, strip_variations
from .registry import Artifact, Registry

ENV_TMP = "TAGRUN_TMP"
ENV_SCRIPT_DIR = "TAGRUN_SCRIPT_DIR"
ENV_URL_MIRROR = "TAGRUN_URL_MIRROR"

CHECKSUM_RE = re.compile(r"^[0-9a-f]{32}$")
PLATFORM_SCRIPTS = {"linux": "run.sh", "macos": "run.sh", "windows": "run.bat"}
HOOK_PHASES = ("preprocess", "postprocess")


# ---------------------------------------------------------------------------
# platform
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlatformDescriptor:
    os_family: str
    arch: str
    distro: str | None = None
    path_separator: str = "/"

    def as_dict(self) -> dict:
        return {"os_family": self.os_family, "arch": self.arch,
                "distro": self.distro,
                "path_separator": self.path_separator}


def detect_platform() -> PlatformDescriptor:
    """Identify the host; unsupported systems are a hard error."""
    system = platform_mod.system()
    family = {"Linux": "linux", "Darwin": "macos",
              "Windows": "windows"}.get(system)
    if family is None:
        raise PortabilityError(f"unsupported host operating system: {system!r}")
    distro = None
    if family == "linux":
        os_release = Path("/etc/os-release")
        if os_release.is_file():
            for line in os_release.read_text().splitlines():
                if line.startswith("ID="):
                    distro = line.partition("=")[2].strip().strip('"')
                    break
    return PlatformDescriptor(
        os_family=family,
        arch=platform_mod.machine(),
        distro=distro,
        path_separator="\\" if family == "windows" else "/",
    )


# ---------------------------------------------------------------------------
# layered environment
# ---------------------------------------------------------------------------

LAYER_BASE = 0        # inherited process environment
LAYER_DEFAULT = 1     # recipe default_env
LAYER_VARIATION = 2   # variation env overrides
LAYER_DEPENDENCY = 3  # exports from dependencies, hooks and probes
LAYER_USER = 4        # --env.KEY=VALUE overrides

LAYER_NAMES = {
    "base": LAYER_BASE,
    "default": LAYER_DEFAULT,
    "variation": LAYER_VARIATION,
    "dependency": LAYER_DEPENDENCY,
    "user": LAYER_USER,
}


@dataclass
class LayeredEnv:
    """Environment map remembering which precedence layer wrote each key.

    A write lands only if its layer is at least as strong as the key's
    current layer; within one layer, later writes win.
    """

    values: dict[str, str] = field(default_factory=dict)
    layers: dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, mapping, layer: int = LAYER_BASE) -> "LayeredEnv":
        env = cls()
        env.update(mapping, layer)
        return env

    def update(self, mapping, layer: int) -> None:
        for key, value in mapping.items():
            key = str(key)
            if not key or "=" in key:
                raise InputError(f"invalid environment key {key!r}")
            if layer >= self.layers.get(key, LAYER_BASE):
                self.values[key] = str(value)
                self.layers[key] = layer

    def merged(self, mapping, layer: int) -> "LayeredEnv":
        clone = LayeredEnv(values=dict(self.values), layers=dict(self.layers))
        clone.update(mapping, layer)
        return clone

    def get(self, key: str, default: str | None = None) -> str | None:
        return self.values.get(key, default)


def env_merge(base, addition, precedence_layer: str) -> LayeredEnv:
    """Deterministic layered merge (default < variation < dependency < user)."""
    if precedence_layer not in LAYER_NAMES:
        raise InputError(f"unknown precedence layer {precedence_layer!r}")
    if not isinstance(base, LayeredEnv):
        base = LayeredEnv.from_mapping(base)
    return base.merged(addition, LAYER_NAMES[precedence_layer])


# ---------------------------------------------------------------------------
# versions
# ---------------------------------------------------------------------------

def parse_version(text: str) -> tuple[int, ...]:
    """Dot-separated non-negative integers; a trailing non-numeric suffix
    (``3.9.1rc2`` -> 3.9.1) is ignored."""
    components: list[int] = []
    for part in str(text).strip().split("."):
        m = re.match(r"(\d+)", part)
        if not m:
            break
        components.append(int(m.group(1)))
        if m.end() != len(part):
            break
    if not components:
        raise VersionError(f"cannot parse version string {text!r}")
    return tuple(components)


def compare_versions(a: str, b: str) -> int:
    """Componentwise numeric comparison; missing components count as 0."""
    va, vb = parse_version(a), parse_version(b)
    width = max(len(va), len(vb))
    va += (0,) * (width - len(va))
    vb += (0,) * (width - len(vb))
    return (va > vb) - (va < vb)


def check_version(detected: str, version_min: str | None = None,
                  version_max: str | None = None) -> bool:
    if version_min is not None and compare_versions(detected, version_min) < 0:
        return False
    if version_max is not None and compare_versions(detected, version_max) > 0:
        return False
    return True


# ---------------------------------------------------------------------------
# hooks
# ---------------------------------------------------------------------------

def find_hook(recipe_dir: Path, phase: str) -> Path | None:
    """Hooks are optional executables named after their phase."""
    for candidate in (recipe_dir / phase, recipe_dir / f"{phase}.py"):
        if candidate.is_file():
            return candidate
    return None


def run_hook(phase: str, hook_program: Path, context_doc: dict,
             env: dict[str, str], log: "ExecutionLog | None" = None) -> dict:
    """Invoke a hook: JSON context on stdin, JSON delta on stdout.

    The reply schema is ``{"env_additions": {...}, "state_additions":
    {...}, "return_code": 0}``; a nonzero return_code aborts the recipe
    with the hook's stderr attached.
    """
    if phase not in HOOK_PHASES:
        raise ValueError(f"unknown hook phase {phase!r}")
    argv = [str(hook_program)]
    if hook_program.suffix == ".py":
        argv = [sys.executable, str(hook_program)]
    proc = subprocess.run(
        argv,
        input=json.dumps(context_doc),
        capture_output=True,
        text=True,
        env=env,
        cwd=context_doc.get("workdir") or None,
    )
    if log is not None:
        log.subprocess(argv, phase=phase)
    if proc.returncode != 0:
        raise HookProtocolError(
            f"{phase} hook {hook_program.name} exited with "
            f"{proc.returncode}: {proc.stderr.strip()[:500]}")
    text = proc.stdout.strip()
    if not text:
        text = "{}"
    try:
        reply = json.loads(text)
    except json.JSONDecodeError as exc:
        raise HookProtocolError(
            f"{phase} hook {hook_program.name} emitted invalid JSON "
            f"({exc}); first bytes: {text[:200]!r}") from exc
    if not isinstance(reply, dict):
        raise HookProtocolError(
            f"{phase} hook {hook_program.name} must emit a JSON object; "
            f"first bytes: {text[:200]!r}")
    code = reply.get("return_code", 0)
    if code != 0:
        raise HookFailure(
            f"{phase} hook {hook_program.name} reported failure "
            f"(return_code={code}): "
            + (reply.get("message") or proc.stderr.strip()[:500]),
            error_class=reply.get("error_class"),
            stderr=proc.stderr)
    return reply


# ---------------------------------------------------------------------------
# downloads
# ---------------------------------------------------------------------------

def md5_of(path: Path) -> str:
    digest = hashlib.md5()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def download_and_verify(url: str, expected_checksum: str,
                        verify_tls: bool = True,
                        dest_dir: Path | None = None) -> Path:
    """Fetch ``url`` and require its MD5 digest to match.

    ``file://`` URLs and plain paths are copied; http(s) goes through
    urllib (with certificate checks dropped when ``verify_tls`` is
    false).  A directory named by ``TAGRUN_URL_MIRROR`` is consulted
    first so hermetic environments can serve fixtures by file name.  On a
    digest mismatch the file is deleted and both digests are reported.
    """
    expected = expected_checksum.strip().lower()
    if not CHECKSUM_RE.match(expected):
        raise InputError(
            f"expected checksum {expected_checksum!r} is not a 32-character "
            "lowercase hex digest")
    dest_dir = Path(dest_dir) if dest_dir else Path.cwd()
    dest_dir.mkdir(parents=True, exist_ok=True)
    name = url.rstrip("/").rsplit("/", 1)[-1] or "download"
    target = dest_dir / name

    mirror = os.environ.get(ENV_URL_MIRROR)
    source_path: Path | None = None
    if mirror and (Path(mirror) / name).is_file():
        source_path = Path(mirror) / name
    elif url.startswith("file://"):
        source_path = Path(url[len("file://"):])
    elif "://" not in url:
        source_path = Path(url)

    try:
        if source_path is not None:
            if not source_path.is_file():
                raise DownloadError(f"no such file: {source_path}")
            if source_path.resolve() != target.resolve():
                shutil.copyfile(source_path, target)
        else:
            ctx = None
            if url.startswith("https://") and not verify_tls:
                ctx = ssl._create_unverified_context()
            with urllib.request.urlopen(url, context=ctx, timeout=60) as resp:
                with open(target, "wb") as out:
                    shutil.copyfileobj(resp, out)
    except (OSError, urllib.error.URLError) as exc:
        target.unlink(missing_ok=True)
        raise DownloadError(f"cannot fetch {url}: {exc}") from exc

    actual = md5_of(target)
    if actual != expected:
        target.unlink(missing_ok=True)
        raise ChecksumError(
            f"checksum mismatch for {url}: expected {expected}, "
            f"got {actual} (file removed)",
            expected=expected, actual=actual)
    return target


# ---------------------------------------------------------------------------
# execution context and log
# ---------------------------------------------------------------------------

@dataclass
class RunFlags:
    json_output: bool = False
    verbose: bool = False
    force_rerun: bool = False


@dataclass
class RunResult:
    return_code: int
    new_env: dict[str, str]
    output: dict
    elapsed_seconds: float
    from_cache: bool


class ExecutionLog:
    """Ordered record of everything an invocation did."""

    def __init__(self):
        self.events: list[dict] = []

    def script_run(self, artifact: Artifact, variations: tuple[str, ...],
                   from_cache: bool) -> None:
        self.events.append({
            "type": "cache_hit" if from_cache else "script_run",
            "uid": artifact.id.uid,
            "alias": artifact.id.alias,
            "variations": list(variations),
        })

    def subprocess(self, argv: list[str], phase: str) -> None:
        self.events.append({"type": "subprocess", "argv": list(argv),
                            "phase": phase})

    def executed_scripts(self) -> list[tuple[str, tuple[str, ...]]]:
        return [(e["uid"], tuple(e["variations"]))
                for e in self.events if e["type"] == "script_run"]

    def subprocess_count(self) -> int:
        return sum(1 for e in self.events if e["type"] == "subprocess")

    def cache_hits(self) -> int:
        return sum(1 for e in self.events if e["type"] == "cache_hit")


# ---------------------------------------------------------------------------
# planning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlanStep:
    uid: str
    alias: str | None
    command: str                      # selector reproducing this step
    variations: tuple[str, ...]
    cacheable: bool
    version_min: str | None = None
    version_max: str | None = None
    supports: frozenset[str] = frozenset()
    repo: str = "local"

    def signature_tuple(self) -> tuple:
        return (self.uid, tuple(self.variations),
                self.version_min, self.version_max)


@dataclass
class RunPlan:
    steps: tuple[PlanStep, ...]       # dependency-first, entry last
    repos: tuple[tuple[str, str | None], ...]
    entry_command: str
    env_settings: dict[str, str]

    @property
    def entry(self) -> PlanStep:
        return self.steps[-1]

    def digest(self) -> str:
        return cache_mod.dep_signature(
            [s.signature_tuple() for s in self.steps])


def _supported_families(recipe_dir: Path) -> frozenset[str]:
    return frozenset(family for family, script in PLATFORM_SCRIPTS.items()
                     if (recipe_dir / script).is_file())


# ---------------------------------------------------------------------------
# runner
# ---------------------------------------------------------------------------

class Runner:
    """One CLI invocation's execution pipeline (single-threaded)."""

    def __init__(self, registry: Registry,
                 flags: RunFlags | None = None,
                 platform: PlatformDescriptor | None = None,
                 base_env: dict[str, str] | None = None):
        self.registry = registry
        self.cache = cache_mod.CacheStore(registry)
        self.flags = flags or RunFlags()
        self.platform = platform or detect_platform()
        self.log = ExecutionLog()
        self.state: dict = {}
        self._probe_results: dict[str, str] = {}
        self._base_env = dict(os.environ if base_env is None else base_env)

    # -- public API -------------------------------------------------------

    def run(self, query: Query, env_overrides: dict[str, str] | None = None,
            inputs: dict[str, str] | None = None,
            version_min: str | None = None,
            version_max: str | None = None) -> RunResult:
        artifact = self._resolve_script(query)
        env = LayeredEnv.from_mapping(self._base_env, LAYER_BASE)
        env = env.merged(env_overrides or {}, LAYER_USER)
        started = time.monotonic()
        result = self._run_artifact(
            artifact, query.variations, env,
            inputs=inputs or {}, version_min=version_min,
            version_max=version_max, chain=())
        result.elapsed_seconds = time.monotonic() - started
        return result

    def plan(self, query: Query, env_overrides: dict[str, str] | None = None,
             inputs: dict[str, str] | None = None,
             version_min: str | None = None,
             version_max: str | None = None) -> RunPlan:
        """Resolve the full dependency plan without executing anything.

        Conditions are evaluated against the invocation-time environment;
        keys that dependencies would export at runtime are not simulated.
        """
        artifact = self._resolve_script(query)
        env = LayeredEnv.from_mapping(self._base_env, LAYER_BASE)
        env = env.merged(env_overrides or {}, LAYER_USER)
        seen: set[tuple] = set()
        steps = self._plan_artifact(artifact, query.variations, env,
                                    version_min, version_max, chain=(),
                                    seen=seen)
        repos: list[tuple[str, str | None]] = []
        by_name = {r.name: r for r in self.registry.list_repos()}
        for step in steps:
            repo = by_name.get(step.repo)
            if repo is None or repo.name == "local":
                continue
            item = (repo.name, repo.branch)
            if item not in repos:
                repos.append(item)
        return RunPlan(
            steps=tuple(steps),
            repos=tuple(repos),
            entry_command=render_run_command(
                query, env_overrides or {}, version_min, version_max,
                inputs=inputs),
            env_settings=dict(sorted((env_overrides or {}).items())),
        )

    # -- resolution ---------------------------------------------------------

    def _resolve_script(self, query: Query) -> Artifact:
        candidates = self.registry.find(strip_variations(query), "script")
        return select_unique(query, candidates)

    def _effective(self, artifact: Artifact,
                   variations: tuple[str, ...]) -> EffectiveMeta:
        meta = metamodel.load_meta(artifact)
        return metamodel.apply_variations(meta, variations)

    def _dep_plan_steps(self, eff: EffectiveMeta, env: LayeredEnv,
                        chain: tuple[str, ...]) -> list[PlanStep]:
        """Dependency plan used for the cache signature (entry excluded)."""
        seen: set[tuple] = set()
        steps: list[PlanStep] = []
        for dep in eff.deps + eff.post_deps:
            if not metamodel.evaluate_condition(dep, env.values):
                continue
            dep_artifact = self._resolve_script(dep.query)
            steps.extend(self._plan_artifact(
                dep_artifact, dep.query.variations, env,
                dep.version_min, dep.version_max,
                chain=chain, seen=seen))
        return steps

    def _plan_artifact(self, artifact: Artifact, variations: tuple[str, ...],
                       env: LayeredEnv, version_min, version_max,
                       chain: tuple[str, ...],
                       seen: set[tuple]) -> list[PlanStep]:
        if artifact.id.uid in chain:
            labels = [self._label(uid) for uid in (*chain, artifact.id.uid)]
            raise CycleError("dependency cycle: " + " -> ".join(labels),
                             chain=labels)
        eff = self._effective(artifact, variations)
        local_env = env.merged(eff.env_defaults, LAYER_DEFAULT)
        local_env = local_env.merged(eff.env_variation, LAYER_VARIATION)

        key = (artifact.id.uid, tuple(sorted(eff.active_variations)))
        if eff.cacheable and key in seen:
            return []

        steps: list[PlanStep] = []
        sub_chain = chain + (artifact.id.uid,)
        for dep in eff.deps:
            if not metamodel.evaluate_condition(dep, local_env.values):
                continue
            dep_artifact = self._resolve_script(dep.query)
            steps.extend(self._plan_artifact(
                dep_artifact, dep.query.variations, local_env,
                dep.version_min, dep.version_max, sub_chain, seen))
        steps.append(PlanStep(
            uid=artifact.id.uid,
            alias=artifact.id.alias,
            command=_step_command(artifact, eff.active_variations),
            variations=eff.active_variations,
            cacheable=eff.cacheable,
            version_min=version_min,
            version_max=version_max,
            supports=_supported_families(artifact.path),
            repo=artifact.repo,
        ))
        if eff.cacheable:
            seen.add(key)
        for dep in eff.post_deps:
            if not metamodel.evaluate_condition(dep, local_env.values):
                continue
            dep_artifact = self._resolve_script(dep.query)
            steps.extend(self._plan_artifact(
                dep_artifact, dep.query.variations, local_env,
                dep.version_min, dep.version_max, sub_chain, seen))
        return steps

    # -- execution ---------------------------------------------------------

    def _run_artifact(self, artifact: Artifact, variations: tuple[str, ...],
                      env: LayeredEnv, inputs: dict[str, str],
                      version_min: str | None, version_max: str | None,
                      chain: tuple[str, ...]) -> RunResult:
        if artifact.id.uid in chain:
            names = [*chain, artifact.id.uid]
            labels = [self._label(uid) for uid in names]
            raise CycleError("dependency cycle: " + " -> ".join(labels),
                             chain=labels)
        chain = chain + (artifact.id.uid,)

        eff = self._effective(artifact, variations)
        env = env.merged(eff.env_defaults, LAYER_DEFAULT)
        env = env.merged(eff.env_variation, LAYER_VARIATION)
        env = env.merged(self._map_inputs(eff.meta, inputs), LAYER_USER)

        signature = ""
        if eff.cacheable:
            signature = cache_mod.dep_signature(
                [s.signature_tuple()
                 for s in self._dep_plan_steps(eff, env, chain)])
            if not self.flags.force_rerun:
                hit = self.cache.probe(eff.tags, signature,
                                       version_min, version_max)
                if hit is not None:
                    self.log.script_run(artifact, eff.active_variations,
                                        from_cache=True)
                    return RunResult(
                        return_code=0,
                        new_env=dict(hit.env_snapshot),
                        output={"cached_dir": str(hit.dir)},
                        elapsed_seconds=0.0,
                        from_cache=True,
                    )

        started = time.monotonic()
        additions: dict[str, str] = {}

        # Dependencies first, accumulating their exports.
        for dep in eff.deps:
            env, _ = self._run_dependency(dep, env, chain)

        # Version detection and gating before any work happens.
        detected = None
        if eff.meta.version_probe is not None:
            detected = self._probe_version(eff.meta, env)
            probe_env = {eff.meta.version_probe.env_key: detected}
            env = env.merged(probe_env, LAYER_DEPENDENCY)
            additions.update(probe_env)
        if version_min or version_max:
            if detected is None:
                raise VersionGateError(
                    f"{artifact.describe()} declares no version probe but a "
                    "version bound was requested")
            if not check_version(detected, version_min, version_max):
                bounds = " ".join(
                    p for p in (f">= {version_min}" if version_min else "",
                                f"<= {version_max}" if version_max else "")
                    if p)
                raise VersionGateError(
                    f"detected version {detected} of {artifact.describe()} "
                    f"violates the requested bound {bounds}")

        workdir, payload_uid = self._make_workdir(eff)
        try:
            hook_ctx = {
                "env": None,  # filled per phase below
                "state": self.state,
                "platform": self.platform.as_dict(),
                "inputs": inputs,
                "workdir": str(workdir),
            }
            for phase in ("preprocess", "script", "postprocess"):
                run_env = self._subprocess_env(env, workdir, artifact)
                if phase == "script":
                    self._run_platform_script(artifact, run_env, workdir)
                    continue
                hook = find_hook(artifact.path, phase)
                if hook is None:
                    continue
                hook_ctx["env"] = dict(run_env)
                reply = run_hook(phase, hook, hook_ctx, run_env, self.log)
                env_add = dict(reply.get("env_additions") or {})
                env = env.merged(env_add, LAYER_DEPENDENCY)
                additions.update(env_add)
                state_add = reply.get("state_additions") or {}
                if not isinstance(state_add, dict):
                    raise HookProtocolError(
                        f"{phase} hook state_additions must be an object")
                self.state.update(state_add)

            self.log.script_run(artifact, eff.active_variations,
                                from_cache=False)
            for dep in eff.post_deps:
                env, _ = self._run_dependency(dep, env, chain)
        except Exception:
            if payload_uid is not None:
                shutil.rmtree(workdir, ignore_errors=True)
            raise
        finally:
            if payload_uid is None:
                shutil.rmtree(workdir, ignore_errors=True)

        new_env = {k: v for k, v in additions.items()
                   if any(k.startswith(p) for p in eff.meta.new_env_keys)}
        elapsed = time.monotonic() - started

        if eff.cacheable:
            entry = cache_mod.CacheEntry(
                uid=payload_uid,
                alias=None,
                tags=eff.tags,
                dir=workdir,
                env_snapshot=new_env,
                dep_signature=signature,
                version=detected,
            )
            self.cache.store(entry)

        return RunResult(
            return_code=0,
            new_env=new_env,
            output={"workdir": str(workdir) if eff.cacheable else None},
            elapsed_seconds=elapsed,
            from_cache=False,
        )

    def _run_dependency(self, dep: Dependency, env: LayeredEnv,
                        chain: tuple[str, ...]) -> tuple[LayeredEnv, RunResult | None]:
        if not metamodel.evaluate_condition(dep, env.values):
            return env, None
        dep_artifact = self._resolve_script(dep.query)
        result = self._run_artifact(
            dep_artifact, dep.query.variations, env, inputs={},
            version_min=dep.version_min, version_max=dep.version_max,
            chain=chain)
        return env.merged(result.new_env, LAYER_DEPENDENCY), result

    def _map_inputs(self, meta: ScriptMeta,
                    inputs: dict[str, str]) -> dict[str, str]:
        mapped = {}
        for name, value in inputs.items():
            key = meta.input_mapping.get(name)
            if key is None:
                raise InputError(
                    f"recipe {meta.alias or meta.uid} does not accept "
                    f"--{name} (declared inputs: "
                    f"{', '.join(sorted(meta.input_mapping)) or 'none'})")
            # Existing relative paths are pinned to the caller's cwd so
            # recipes can run from their own workspaces.
            candidate = Path(value)
            if not candidate.is_absolute() and candidate.exists():
                value = str(candidate.resolve())
            mapped[key] = value
        return mapped

    def _probe_version(self, meta: ScriptMeta, env: LayeredEnv) -> str:
        probe = meta.version_probe
        if meta.uid in self._probe_results:
            return self._probe_results[meta.uid]
        proc = subprocess.run(
            list(probe.command), capture_output=True, text=True,
            env=dict(env.values))
        self.log.subprocess(list(probe.command), phase="version-probe")
        output = proc.stdout + proc.stderr
        match = re.search(probe.pattern, output)
        if proc.returncode != 0 or not match:
            raise VersionError(
                f"version probe {' '.join(probe.command)} failed "
                f"(rc={proc.returncode}, output={output.strip()[:200]!r})")
        detected = match.group(1)
        parse_version(detected)  # validates the capture
        self._probe_results[meta.uid] = detected
        return detected

    def _make_workdir(self, eff: EffectiveMeta) -> tuple[Path, str | None]:
        if eff.cacheable:
            uid, directory = self.cache.new_payload_dir()
            return directory, uid
        tmp_base = self.registry.home / "tmp"
        tmp_base.mkdir(parents=True, exist_ok=True)
        return Path(tempfile.mkdtemp(dir=tmp_base)), None

    def _subprocess_env(self, env: LayeredEnv, workdir: Path,
                        artifact: Artifact) -> dict[str, str]:
        run_env = dict(env.values)
        run_env[ENV_TMP] = str(workdir)
        run_env[ENV_SCRIPT_DIR] = str(artifact.path)
        return run_env

    def _run_platform_script(self, artifact: Artifact, run_env: dict,
                             workdir: Path) -> None:
        script_name = PLATFORM_SCRIPTS[self.platform.os_family]
        script = artifact.path / script_name
        if not script.is_file():
            raise PortabilityError(
                f"{artifact.describe()} has no {script_name}; the recipe is "
                f"not portable to {self.platform.os_family}")
        if self.platform.os_family == "windows":
            argv = ["cmd", "/c", str(script)]
        else:
            argv = ["bash", str(script)]
        proc = subprocess.run(argv, env=run_env, cwd=workdir,
                              capture_output=True, text=True)
        stdout, stderr = proc.stdout, proc.stderr
        if self.flags.verbose:
            # Relay through stderr so --json output stays parseable.
            if stdout:
                sys.stderr.write(stdout)
            if stderr:
                sys.stderr.write(stderr)
        self.log.subprocess(argv, phase="script")
        if proc.returncode != 0:
            raise SubprocessError(
                f"{script_name} of {artifact.describe()} exited with "
                f"{proc.returncode}",
                return_code=proc.returncode, stdout=stdout, stderr=stderr)

    def _label(self, uid: str) -> str:
        for artifact in self.registry.scan("script"):
            if artifact.id.uid == uid:
                return artifact.describe()
        return uid


# ---------------------------------------------------------------------------
# command rendering (shared with report generation)
# ---------------------------------------------------------------------------

def _step_command(artifact: Artifact, variations: tuple[str, ...]) -> str:
    tokens = sorted(artifact.tags) + [f"_{v}" for v in variations]
    return " ".join(tokens)


def render_run_command(query: Query, env_overrides: dict[str, str],
                       version_min: str | None = None,
                       version_max: str | None = None,
                       inputs: dict[str, str] | None = None,
                       program: str = "cm") -> str:
    parts = [program, "run", "script", f'"{query.surface()}"']
    for key, value in sorted((inputs or {}).items()):
        parts.append(f"--{key}={value}")
    for key, value in sorted(env_overrides.items()):
        parts.append(f"--env.{key}={value}")
    if version_min:
        parts.append(f"--version_min={version_min}")
    if version_max:
        parts.append(f"--version_max={version_max}")
    return " ".join(parts)
