"""Command line surface.

Grammar: ``<action> <kind> [positional] [flags]`` where

* actions: pull find ls load add run rm delete show list
  (``ls`` and ``list`` are aliases of ``find``; ``delete`` of ``rm``)
* kinds:   repo script cache experiment

Selector positionals are space separated ("get ml-model resnet50 _fp32");
the ``--tags=`` flag takes the comma form.  ``--env.KEY=VALUE`` and
``--metric.KEY=VALUE`` are repeatable dotted flags.  Unknown actions,
kinds or flags are usage errors.

Exit codes: 0 success, 1 domain error, 2 usage error.  With ``--json``
(or ``--out=json``) the final stdout line is one self-contained JSON
document; progress and relayed subprocess output go to stderr.
"""

from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import codegen, experiment, metamodel
from .cache import CacheStore
from .errors import TagrunError, UsageError
from .executor import RunFlags, Runner, detect_platform
from .query import Query, merge_queries, parse_query, select_unique
from .registry import Registry, framework_home

ACTIONS = ("pull", "find", "ls", "load", "add", "run", "rm", "delete",
           "show", "list")
ACTION_ALIASES = {"ls": "find", "list": "find", "delete": "rm"}
KINDS = ("repo", "script", "cache", "experiment")

BOOL_FLAGS = {"--json": "json_output", "--verbose": "verbose",
              "-f": "force", "--force": "force"}
VALUE_FLAGS = {
    "--tags": "tags",
    "--out": "out",
    "--version_min": "version_min",
    "--version_max": "version_max",
    "--input": "input",
    "--url": "url",
    "--verify": "verify",
    "--branch": "branch",
    "--generate": "generate",
    "--base-image": "base_image",
    "--output-dir": "output_dir",
    "--report-dir": "report_dir",
    "--plan-digest": "plan_digest",
}

USAGE = """usage: tagrun <action> <kind> [selector] [flags]

actions: pull find ls load add run rm delete show list
kinds:   repo script cache experiment

common flags:
  --tags=a,b,_c         comma-separated selector
  --env.KEY=VALUE       environment override (repeatable)
  --metric.KEY=VALUE    metric value for 'add experiment' (repeatable)
  --json | --out=json   machine-readable output (final stdout line)
  --verbose             relay recipe output
  -f, --force           force (wipe without confirmation / rerun)
  --version_min= --version_max=   version gates
  --input= --url= --verify=       recipe inputs
  --branch=             repository branch for 'pull repo'
  --generate=readme,container     render replay files instead of running
  --base-image= --output-dir=     generation options
  --report-dir=         write experiment report (CSV + figures)
  --plan-digest=        provenance link for 'add experiment'
"""


@dataclass
class Invocation:
    action: str
    kind: str
    positional: str | None = None
    tags: str | None = None
    env: dict[str, str] = field(default_factory=dict)
    metrics: dict[str, str] = field(default_factory=dict)
    json_output: bool = False
    verbose: bool = False
    force: bool = False
    version_min: str | None = None
    version_max: str | None = None
    input: str | None = None
    url: str | None = None
    verify: str | None = None
    branch: str | None = None
    generate: str | None = None
    base_image: str | None = None
    output_dir: str | None = None
    report_dir: str | None = None
    plan_digest: str | None = None


def parse_argv(argv: list[str]) -> Invocation:
    """Parse a command line (program name already stripped)."""
    if len(argv) < 2:
        raise UsageError("an action and an artifact kind are required\n\n"
                         + USAGE)
    action, kind = argv[0], argv[1]
    if action not in ACTIONS:
        raise UsageError(f"unknown action {action!r}\n\n{USAGE}")
    action = ACTION_ALIASES.get(action, action)
    if kind not in KINDS:
        raise UsageError(f"unknown artifact kind {kind!r}\n\n{USAGE}")

    inv = Invocation(action=action, kind=kind)
    positionals: list[str] = []
    for token in argv[2:]:
        if token in BOOL_FLAGS:
            setattr(inv, BOOL_FLAGS[token], True)
        elif token.startswith("--env."):
            key, sep, value = token[len("--env."):].partition("=")
            if not key or not sep:
                raise UsageError(f"malformed flag {token!r} "
                                 "(expected --env.KEY=VALUE)")
            inv.env[key] = value
        elif token.startswith("--metric."):
            key, sep, value = token[len("--metric."):].partition("=")
            if not key or not sep:
                raise UsageError(f"malformed flag {token!r} "
                                 "(expected --metric.KEY=VALUE)")
            inv.metrics[key] = value
        elif token.startswith("--"):
            name, sep, value = token.partition("=")
            if name not in VALUE_FLAGS:
                raise UsageError(f"unknown flag {name!r}\n\n{USAGE}")
            if not sep:
                raise UsageError(f"flag {name} needs a value ({name}=...)")
            if name == "--out":
                if value != "json":
                    raise UsageError(f"unsupported output format {value!r} "
                                     "(only --out=json)")
                inv.json_output = True
            else:
                setattr(inv, VALUE_FLAGS[name], value)
        elif token.startswith("-") and len(token) > 1 and token != "-f":
            raise UsageError(f"unknown flag {token!r}\n\n{USAGE}")
        else:
            positionals.append(token)

    if len(positionals) > 1:
        raise UsageError("at most one positional selector is allowed; "
                         "quote multi-tag selectors")
    inv.positional = positionals[0] if positionals else None
    return inv


def _selector(inv: Invocation, *, allow_empty: bool) -> Query:
    positional = parse_query(inv.positional or "", syntax="space")
    tags = parse_query(inv.tags or "", syntax="comma")
    query = merge_queries(positional, tags)
    if query.is_empty() and not allow_empty:
        raise UsageError(f"'{inv.action} {inv.kind}' needs a selector "
                         "(positional tags or --tags=)")
    return query


def _inputs(inv: Invocation) -> dict[str, str]:
    inputs = {}
    for name in ("input", "url", "verify"):
        value = getattr(inv, name)
        if value is not None:
            inputs[name] = value
    return inputs


class Session:
    """One CLI invocation bound to a framework home."""

    def __init__(self, home: Path | None = None):
        self.registry = Registry(home)
        self.cache = CacheStore(self.registry)

    # -- dispatch -------------------------------------------------------

    def dispatch(self, inv: Invocation) -> tuple[dict, str]:
        """Route to the owning module; returns (json doc, human text)."""
        handler = {
            "pull": self._pull,
            "find": self._find,
            "load": self._load,
            "add": self._add,
            "run": self._run,
            "rm": self._rm,
            "show": self._show,
        }[inv.action]
        return handler(inv)

    # -- handlers ---------------------------------------------------------

    def _pull(self, inv: Invocation) -> tuple[dict, str]:
        if inv.kind != "repo":
            raise UsageError("pull works on repositories: pull repo <name>")
        if not inv.positional:
            raise UsageError("pull repo needs a locator (org@repo)")
        repo = self.registry.register_repo(inv.positional,
                                           branch=inv.branch,
                                           source=inv.url)
        scripts = [a for a in self.registry.scan("script")
                   if a.repo == repo.name]
        doc = {"repo": {"name": repo.name, "root": str(repo.root),
                        "branch": repo.branch},
               "scripts": len(scripts)}
        human = (f"registered repository {repo.name} at {repo.root} "
                 f"({len(scripts)} scripts)")
        return doc, human

    def _find(self, inv: Invocation) -> tuple[dict, str]:
        if inv.kind == "repo":
            return self._show_repos()
        query = _selector(inv, allow_empty=True)
        found = self.registry.find(query, inv.kind)
        doc = {"count": len(found), "matches": [
            {"uid": a.id.uid, "alias": a.id.alias, "repo": a.repo,
             "kind": a.kind, "tags": sorted(a.tags), "path": str(a.path)}
            for a in found]}
        lines = [f"{a.describe()}  tags: {','.join(sorted(a.tags))}"
                 for a in found]
        lines.append(f"{len(found)} {inv.kind}(s) found")
        return doc, "\n".join(lines)

    def _show_repos(self) -> tuple[dict, str]:
        repos = self.registry.list_repos()
        doc = {"repos": [
            {"name": r.name, "root": str(r.root), "branch": r.branch,
             "order": r.registration_order} for r in repos]}
        human = "\n".join(
            f"{r.name}  {r.root}" + (f"  branch={r.branch}" if r.branch else "")
            for r in repos)
        return doc, human

    def _load(self, inv: Invocation) -> tuple[dict, str]:
        if inv.kind == "repo":
            raise UsageError("load works on artifacts, not repositories")
        if not inv.positional:
            raise UsageError("load needs an alias or UID")
        hits = self.registry.resolve_name(inv.kind, inv.positional)
        artifact = select_unique(parse_query(inv.positional), hits)
        if inv.kind == "script":
            # Validates the document beyond the raw scan.
            metamodel.load_meta(artifact)
        doc = {"meta": artifact.meta, "path": str(artifact.path),
               "repo": artifact.repo}
        return doc, json.dumps(artifact.meta, indent=2, sort_keys=True)

    def _add(self, inv: Invocation) -> tuple[dict, str]:
        if inv.kind == "script":
            if not inv.positional:
                raise UsageError("add script needs an alias")
            query = parse_query(inv.tags or "", syntax="comma")
            if not query.required:
                raise UsageError("add script needs --tags=")
            artifact = self.registry.add_artifact(
                "script", inv.positional,
                query.required | {f"_{v}" for v in query.variations})
        elif inv.kind == "experiment":
            if not inv.metrics:
                raise UsageError(
                    "add experiment needs at least one --metric.NAME=VALUE")
            query = parse_query(inv.tags or "", syntax="comma")
            context = {
                "plan_digest": inv.plan_digest or experiment.empty_plan_digest(),
                "platform": detect_platform().as_dict(),
                "timestamp": time.time(),
            }
            entry = experiment.record(
                self.registry, query.required, inv.metrics,
                context=context, alias=inv.positional)
            doc = {"added": {"uid": entry.uid, "alias": entry.alias,
                             "tags": sorted(entry.tags),
                             "metrics": entry.metrics}}
            return doc, f"recorded experiment {entry.label()} ({entry.uid})"
        else:
            raise UsageError(f"cannot add {inv.kind} entries directly")
        doc = {"added": {"uid": artifact.id.uid, "alias": artifact.id.alias,
                         "tags": sorted(artifact.tags),
                         "path": str(artifact.path)}}
        human = f"added {inv.kind} {artifact.id.alias} ({artifact.id.uid})"
        return doc, human

    def _run(self, inv: Invocation) -> tuple[dict, str]:
        if inv.kind != "script":
            raise UsageError("run works on scripts: run script <selector>")
        query = _selector(inv, allow_empty=False)
        runner = Runner(self.registry,
                        flags=RunFlags(json_output=inv.json_output,
                                       verbose=inv.verbose,
                                       force_rerun=inv.force))
        if inv.generate:
            targets = [t.strip() for t in inv.generate.split(",") if t.strip()]
            unknown = [t for t in targets if t not in ("readme", "container")]
            if unknown or not targets:
                raise UsageError("--generate takes a comma list out of: "
                                 "readme,container")
            plan = runner.plan(query, env_overrides=inv.env,
                               inputs=_inputs(inv),
                               version_min=inv.version_min,
                               version_max=inv.version_max)
            out_dir = Path(inv.output_dir) if inv.output_dir else Path.cwd()
            written = codegen.write_outputs(
                plan, targets, out_dir,
                base_image=inv.base_image or codegen.DEFAULT_BASE_IMAGE)
            doc = {"generated": [str(p) for p in written],
                   "steps": len(plan.steps), "plan_digest": plan.digest()}
            return doc, "\n".join(f"wrote {p}" for p in written)

        result = runner.run(query, env_overrides=inv.env,
                            inputs=_inputs(inv),
                            version_min=inv.version_min,
                            version_max=inv.version_max)
        doc = {
            "return_code": result.return_code,
            "from_cache": result.from_cache,
            "new_env": result.new_env,
            "elapsed_seconds": result.elapsed_seconds,
            "platform": runner.platform.as_dict(),
            "subprocess_count": runner.log.subprocess_count(),
            "cache_hits": runner.log.cache_hits(),
            "log": runner.log.events,
            "output": result.output,
        }
        human = (f"run finished (from_cache={str(result.from_cache).lower()}, "
                 f"return_code={result.return_code}, "
                 f"elapsed={result.elapsed_seconds:.3f}s)")
        return doc, human

    def _rm(self, inv: Invocation) -> tuple[dict, str]:
        if inv.kind == "repo":
            return self._rm_repo(inv)
        query = _selector(inv, allow_empty=True)
        count = self.registry.remove_artifact(inv.kind, query,
                                              force=inv.force)
        return {"removed": count}, f"removed {count} {inv.kind}(s)"

    def _rm_repo(self, inv: Invocation) -> tuple[dict, str]:
        if not inv.positional:
            raise UsageError("rm repo needs a repository name")
        name = self.registry.unregister_repo(inv.positional)
        return {"removed_repo": name}, f"unregistered repository {name}"

    def _show(self, inv: Invocation) -> tuple[dict, str]:
        if inv.kind == "repo":
            return self._show_repos()
        if inv.kind == "experiment":
            return self._show_experiments(inv)
        return self._find(inv)

    def _show_experiments(self, inv: Invocation) -> tuple[dict, str]:
        query = _selector(inv, allow_empty=True)
        entries = experiment.load_entries(self.registry, query)
        header, rows = experiment.report_rows(entries)
        if inv.report_dir:
            report = experiment.write_report(entries, Path(inv.report_dir))
            doc = {"report": report, "header": header}
            human = (f"wrote report for {report['entries']} entries: "
                     f"{report['csv']} and {len(report['figures'])} figure(s)")
            return doc, human
        doc = {"count": len(entries), "header": header, "rows": rows}
        widths = [max(len(str(c)) for c in [h] + [r[i] for r in rows])
                  for i, h in enumerate(header)] if rows else None
        lines = []
        if widths:
            lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
            for row in rows:
                lines.append("  ".join(str(c).ljust(w)
                                       for c, w in zip(row, widths)))
        lines.append(f"{len(entries)} experiment(s)")
        return doc, "\n".join(lines)


def main(argv: list[str] | None = None) -> int:
    """CLI entry point; returns the process exit code."""
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    json_mode = any(a in ("--json", "--out=json") for a in argv)
    try:
        inv = parse_argv(argv)
    except UsageError as exc:
        return _fail(exc, json_mode, code=2)
    try:
        session = Session(framework_home())
        doc, human = session.dispatch(inv)
    except UsageError as exc:
        return _fail(exc, inv.json_output, code=2)
    except TagrunError as exc:
        return _fail(exc, inv.json_output, code=1)
    if inv.json_output:
        print(json.dumps(doc, default=str))
    elif human:
        print(human)
    return 0


def _fail(exc: TagrunError, json_mode: bool, code: int) -> int:
    print(f"error: {exc}", file=sys.stderr)
    if json_mode:
        doc = {"error_class": exc.error_class, "message": str(exc)}
        doc.update(exc.payload())
        print(json.dumps(doc, default=str))
    return code
