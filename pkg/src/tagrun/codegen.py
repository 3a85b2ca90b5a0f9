"""Deterministic README and container build file generation.

Both generators are pure functions of a resolved run plan: the same plan
always yields byte-identical text, which keeps generated files diffable
and lets container layer reuse mirror the output cache (one layer per
cacheable step).
"""

from __future__ import annotations

import shlex
from pathlib import Path

from .errors import PortabilityError
from .executor import RunPlan

README_NAME = "README.generated.md"
CONTAINERFILE_NAME = "Containerfile.generated"

# Generated files use the short CLI alias; both `cm` and `tagrun` are
# installed entry points for the same program.
CLI_PROGRAM = "cm"
DEFAULT_BASE_IMAGE = "python:3.11-slim"


def _pull_commands(plan: RunPlan) -> list[str]:
    commands = []
    for name, branch in plan.repos:
        cmd = f"{CLI_PROGRAM} pull repo {name}"
        if branch:
            cmd += f" --branch={branch}"
        commands.append(cmd)
    return commands


def _step_commands(plan: RunPlan) -> list[str]:
    return [f'{CLI_PROGRAM} run script "{step.command}"'
            for step in plan.steps[:-1]]


def generate_readme(plan: RunPlan) -> str:
    """Markdown replay script for a resolved plan.

    Section order is fixed (About, Prerequisites, Setup, Run, Re-run from
    cache); running the Setup and Run commands in order on a fresh home
    reproduces the plan's step sequence.
    """
    if not plan.steps:
        raise ValueError("cannot generate a README for an empty plan")
    entry = plan.entry
    title = entry.alias or entry.uid

    lines: list[str] = []
    lines.append(f"# {title}")
    lines.append("")
    lines.append("## About")
    lines.append("")
    lines.append(f"Automation pipeline for `{title}`: "
                 f"{len(plan.steps) - 1} preparation step(s) plus the "
                 "entry recipe, resolved from tag selectors.")
    lines.append("")
    lines.append("## Prerequisites")
    lines.append("")
    lines.append(f"- the `{CLI_PROGRAM}` command line tool")
    lines.append("- `git` (for pulling recipe repositories)")
    lines.append("")
    lines.append("## Setup")
    lines.append("")
    pulls = _pull_commands(plan)
    if pulls:
        lines.append("```bash")
        lines.extend(pulls)
        lines.append("```")
    else:
        lines.append("All recipes come from the local repository; nothing "
                     "to pull.")
    lines.append("")
    lines.append("## Run")
    lines.append("")
    if plan.env_settings:
        lines.append("Environment settings for this plan:")
        lines.append("")
        for key, value in sorted(plan.env_settings.items()):
            lines.append(f"- `{key}={value}`")
        lines.append("")
    lines.append("Each step below is resolved, executed and cached "
                 "independently; the final command runs the entry recipe.")
    lines.append("")
    lines.append("```bash")
    lines.extend(_step_commands(plan))
    lines.append(plan.entry_command)
    lines.append("```")
    lines.append("")
    lines.append("## Re-run from cache")
    lines.append("")
    lines.append("Cached steps are reused on repeat runs:")
    lines.append("")
    lines.append("```bash")
    lines.append(plan.entry_command)
    lines.append("```")
    lines.append("")
    return "\n".join(lines)


def generate_containerfile(plan: RunPlan,
                           base_image: str = DEFAULT_BASE_IMAGE) -> str:
    """Container build file that pre-warms the cache, one layer per
    cacheable step (mirroring how the output cache is reused)."""
    if not base_image:
        raise ValueError("base_image must be non-empty")
    if not plan.steps:
        raise ValueError("cannot generate a container file for an empty plan")
    for step in plan.steps:
        if "linux" not in step.supports:
            raise PortabilityError(
                f"step {step.alias or step.uid} has no linux script; "
                "cannot containerize this plan")

    lines: list[str] = []
    lines.append(f"FROM {base_image}")
    lines.append("")
    lines.append("RUN pip install --no-cache-dir tagrun")
    for cmd in _pull_commands(plan):
        lines.append(f"RUN {cmd}")
    warm = [f'RUN {CLI_PROGRAM} run script "{step.command}"'
            for step in plan.steps[:-1] if step.cacheable]
    if warm:
        lines.append("")
        lines.extend(warm)
    lines.append("")
    entry = shlex.split(plan.entry_command)
    lines.append("CMD [" + ", ".join(f'"{part}"' for part in entry) + "]")
    lines.append("")
    return "\n".join(lines)


def write_outputs(plan: RunPlan, targets: list[str], out_dir: Path,
                  base_image: str = DEFAULT_BASE_IMAGE) -> list[Path]:
    """Render the requested generators into ``out_dir``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for target in targets:
        if target == "readme":
            path = out_dir / README_NAME
            path.write_text(generate_readme(plan), encoding="utf-8")
        elif target == "container":
            path = out_dir / CONTAINERFILE_NAME
            path.write_text(generate_containerfile(plan, base_image),
                            encoding="utf-8")
        else:
            raise ValueError(f"unknown generation target {target!r} "
                             "(expected readme or container)")
        written.append(path)
    return written
