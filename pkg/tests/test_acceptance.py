"""Acceptance suite: one test per release criterion, one PASS line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines.  The whole suite must stay desk-scale (well under 90 seconds).
"""

from __future__ import annotations

import hashlib
import json
import random
import shlex
import shutil
import subprocess
import time

import pytest

from recipes import build_demo_repo, write_recipe, write_repo_descriptor

from tagrun.cache import CacheStore
from tagrun.cli import main, parse_argv
from tagrun.codegen import generate_containerfile, generate_readme
from tagrun.errors import ChecksumError, VersionGateError
from tagrun.executor import Runner, check_version, download_and_verify
from tagrun.query import matches, parse_query
from tagrun.registry import Registry

from test_query import oracle_matches, _random_query, _random_registry


def ok(line: str) -> None:
    print(f"[ACCEPTANCE PASS] {line}")


# ---------------------------------------------------------------------------
# 1. CLI golden corpus
# ---------------------------------------------------------------------------

# Every command of the canonical walkthrough, in sequence.  The download
# command is served from a local fixture mirror whose stub bytes cannot
# reproduce the original remote file's digest, so the checksum gate MUST
# reject it: its documented outcome is exit code 1 (checksum-mismatch).
GOLDEN_COMMANDS = [
    ("cm pull repo mlcommons@cm4mlops --branch=dev", 0),
    ("cm find script", 0),
    ("cm ls script", 0),
    ("cm find script 5b4e0237da074764", 0),
    ("cm find script *-ml-model-*", 0),
    ("cm find script --tags=resnet50", 0),
    ("cm load script get-ml-model-resnet50 --json", 0),
    ("cm add script my-new-cool-script --tags=my,new,cool-script", 0),
    ("cm run script --tags=my,new,cool-script --env.KEY=VALUE --json", 0),
    ("cm rm script --tags=my,new,cool-script", 0),
    ("cm delete script --tags=my,new,cool-script", 0),
    ('cm run script "get ml-model resnet50 _fp32 _onnx" --json', 0),
    ("cm list cache", 0),
    ("cm find cache --tags=ml-model,resnet50,_fp32", 0),
    ("cm rm cache --tags=ml-model", 0),
    ("cm rm cache -f", 0),
    ('cm run script "get ml-model resnet50 _fp32 _onnx" --verbose', 0),
    ("cm show repo", 0),
    ('cm run script "detect os" --out=json', 0),
    ('cm run script "get python" --version_min=3.9.1', 0),
    ('cm run script "get ml-model resnet50 _onnx _fp32"', 0),
    ('cm run script "get original imagenet dataset _2012-500"', 0),
    ('cm run script "get generic-python-lib _onnxruntime"', 0),
    ('cm run script "download file _wget" '
     "--url=https://cKnowledge.org/ai/data/computer_mouse.jpg "
     "--verify=no --env.CM_DOWNLOAD_CHECKSUM=45ae5c940233892c2f860efdf0b66e7e",
     1),
    ('cm run script "python app image-classification onnx _cpu" '
     "--input=computer_mouse.jpg", 0),
]


@pytest.fixture
def golden_env(home, tmp_path, monkeypatch):
    repo_mirror = tmp_path / "repo-mirror"
    build_demo_repo(repo_mirror / "mlcommons@cm4mlops",
                    name="mlcommons@cm4mlops")
    monkeypatch.setenv("TAGRUN_REPO_MIRROR", str(repo_mirror))

    url_mirror = tmp_path / "url-mirror"
    url_mirror.mkdir()
    (url_mirror / "computer_mouse.jpg").write_bytes(
        b"\xff\xd8\xff stub jpeg fixture\n")
    monkeypatch.setenv("TAGRUN_URL_MIRROR", str(url_mirror))

    workdir = tmp_path / "workdir"
    workdir.mkdir()
    (workdir / "computer_mouse.jpg").write_bytes(
        b"\xff\xd8\xff desk mouse picture\n")
    monkeypatch.chdir(workdir)
    return home


def test_cli_golden_corpus(golden_env, capsys):
    started = time.monotonic()
    for command, expected in GOLDEN_COMMANDS:
        argv = shlex.split(command)
        assert argv[0] == "cm"
        parse_argv(argv[1:])  # every line parses against the grammar
        code = main(argv[1:])
        captured = capsys.readouterr()
        assert code == expected, (
            f"{command!r} exited {code}, expected {expected}\n"
            f"stdout:\n{captured.out}\nstderr:\n{captured.err}")
        if "--json" in command or "--out=json" in command:
            final = captured.out.strip().splitlines()[-1]
            json.loads(final)
    elapsed = time.monotonic() - started
    assert elapsed < 30, f"golden corpus took {elapsed:.1f}s"

    # The installed binary answers under both of its names.
    proc = subprocess.run(["cm", "show", "repo"], capture_output=True)
    assert proc.returncode == 0
    ok(f"CLI golden corpus: {len(GOLDEN_COMMANDS)} commands in "
       f"{elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. tag-matching oracle equivalence
# ---------------------------------------------------------------------------

def test_matcher_oracle_equivalence_1000_pairs():
    rng = random.Random(0xACCE57)
    for i in range(1000):
        artifacts = _random_registry(rng)
        query = _random_query(rng, artifacts)
        for artifact in artifacts:
            got = matches(query, artifact)
            want = oracle_matches(query, artifact)
            assert got == want, (i, query, artifact)
    ok("tag matcher agrees with brute-force oracle on 1000 registry/query "
       "pairs")


# ---------------------------------------------------------------------------
# 3. conditional-dependency truth table
# ---------------------------------------------------------------------------

APP_QUERY = "python app image-classification onnx _cpu"

# Flattened plan enumerated by hand from the recipes: non-cacheable steps
# (detect-os) repeat at every occurrence, cacheable steps appear once.
PLAN_COMMON_HEAD = [
    ("detect-os", ()),
    ("get-sys-utils-cm", ()),
    ("detect-os", ()),            # nested under the python getter
    ("get-python3", ()),
]
PLAN_CUDA_STEPS = [
    ("get-cuda", ()),
    ("get-cudnn", ()),
]
PLAN_COMMON_TAIL = [
    ("get-dataset-imagenet", ()),
    ("get-dataset-aux", ()),
    ("detect-os", ()),            # nested under the model getter
    ("get-ml-model-resnet50", ("onnx",)),
    ("get-generic-python-lib", ("package.pillow",)),
    ("get-generic-python-lib", ("package.numpy",)),
    ("get-generic-python-lib", ("package.opencv-python",)),
]
PLAN_ENTRY = [("app-image-classification-onnx-py", ("cpu",))]


def expected_plan(use_cuda: str | None) -> list[tuple[str, tuple[str, ...]]]:
    runtime = [("get-generic-python-lib",
                ("onnxruntime_gpu" if use_cuda == "yes" else "onnxruntime",))]
    cuda = PLAN_CUDA_STEPS if use_cuda == "yes" else []
    return PLAN_COMMON_HEAD + cuda + PLAN_COMMON_TAIL + runtime + PLAN_ENTRY


@pytest.mark.parametrize("use_cuda", ["yes", "no", None])
def test_conditional_dependency_truth_table(make_runner, use_cuda):
    env = {} if use_cuda is None else {"USE_CUDA": use_cuda}
    plan = make_runner().plan(parse_query(APP_QUERY), env_overrides=env)
    got = [(s.alias, s.variations) for s in plan.steps]
    assert got == expected_plan(use_cuda)

    runtimes = [v for alias, vs in got for v in vs
                if alias == "get-generic-python-lib"
                and v.startswith("onnxruntime")]
    assert len(runtimes) == 1  # exactly one of the runtime pair, always
    ok(f"conditional plan exact under USE_CUDA={use_cuda!r} "
       f"(runtime={runtimes[0]})")


# ---------------------------------------------------------------------------
# 4. cache reuse
# ---------------------------------------------------------------------------

def test_cache_reuse_and_cross_pipeline_sharing(make_runner, tmp_path,
                                                monkeypatch):
    pipeline = parse_query("get ml-model resnet50 _fp32 _onnx")
    first = make_runner()
    r1 = first.run(pipeline)
    assert not r1.from_cache and first.log.subprocess_count() > 0

    second = make_runner()
    r2 = second.run(pipeline)
    assert r2.from_cache
    assert second.log.subprocess_count() == 0
    assert r2.new_env == r1.new_env

    monkeypatch.chdir(tmp_path)
    (tmp_path / "computer_mouse.jpg").write_bytes(b"stub")
    getter_uid = "5b4e0237da074764"
    third = make_runner()
    third.run(parse_query(APP_QUERY),
              inputs={"input": "computer_mouse.jpg"})
    assert all(uid != getter_uid
               for uid, _ in third.log.executed_scripts())
    ok("second pipeline run served from cache with 0 subprocesses; "
       "shared getter never re-executed")


# ---------------------------------------------------------------------------
# 5. variation / cache addressing
# ---------------------------------------------------------------------------

def test_variation_cache_addressing(golden_env, capsys):
    assert main(["pull", "repo", "mlcommons@cm4mlops"]) == 0
    assert main(["run", "script", "get ml-model resnet50 _fp32 _onnx"]) == 0
    capsys.readouterr()
    code = main(["find", "cache", "--tags=ml-model,resnet50,_fp32", "--json"])
    out = capsys.readouterr().out
    assert code == 0
    doc = json.loads(out.strip().splitlines()[-1])
    assert doc["count"] == 1
    assert {"_fp32", "_onnx"} <= set(doc["matches"][0]["tags"])
    ok("cache entry addressable by script tags plus _fp32 variation tag")


# ---------------------------------------------------------------------------
# 6. version gate
# ---------------------------------------------------------------------------

VERSION_CASES = [("3.8.9", False), ("3.9.1", True), ("3.10.0", True)]


def test_version_gate_numeric_comparison(registry):
    for i, (version, _) in enumerate(VERSION_CASES):
        write_recipe(registry.local_root, f"pinned-tool-{i}", {
            "uid": f"{0xbeef0 + i:016x}",
            "tags": ["pinned-tool", f"v{i}"],
            "new_env_keys": ["TOOL_"],
            "version_probe": {
                "command": ["echo", f"tool version {version}"],
                "pattern": r"version ([0-9.]+)",
                "env_key": "TOOL_VERSION",
            },
        })
    registry.rescan()

    for i, (version, accept) in enumerate(VERSION_CASES):
        assert check_version(version, version_min="3.9.1") is accept
        runner = Runner(registry)
        if accept:
            result = runner.run(parse_query(f"pinned-tool v{i}"),
                                version_min="3.9.1")
            assert result.new_env["TOOL_VERSION"] == version
        else:
            with pytest.raises(VersionGateError):
                runner.run(parse_query(f"pinned-tool v{i}"),
                           version_min="3.9.1")
    ok("version gate: 3.8.9 rejected, 3.9.1 and 3.10.0 accepted "
       "against minimum 3.9.1 (numeric compare)")


# ---------------------------------------------------------------------------
# 7. checksum verification
# ---------------------------------------------------------------------------

def test_checksum_verification(tmp_path):
    payload = tmp_path / "asset.bin"
    payload.write_bytes(b"checksum fixture payload\n")
    true_md5 = subprocess.run(["md5sum", str(payload)], capture_output=True,
                              text=True, check=True).stdout.split()[0]
    assert true_md5 == hashlib.md5(payload.read_bytes()).hexdigest()

    fetched = download_and_verify(f"file://{payload}", true_md5,
                                  dest_dir=tmp_path / "good")
    assert fetched.is_file()

    flipped = ("f" if true_md5[0] != "f" else "e") + true_md5[1:]
    with pytest.raises(ChecksumError):
        download_and_verify(f"file://{payload}", flipped,
                            dest_dir=tmp_path / "bad")
    assert not (tmp_path / "bad" / "asset.bin").exists()
    ok("download verified against true MD5; flipped digit rejected and "
       "file removed")


def test_checksum_verification_through_the_recipe(home, demo_repo, tmp_path,
                                                  monkeypatch, capsys):
    registry = Registry(home)
    registry.register_repo("demo@recipes", source=demo_repo)
    payload = tmp_path / "asset.bin"
    payload.write_bytes(b"recipe-level checksum fixture\n")
    true_md5 = hashlib.md5(payload.read_bytes()).hexdigest()

    code = main(["run", "script", "download file _curl",
                 f"--url=file://{payload}",
                 f"--env.CM_DOWNLOAD_CHECKSUM={true_md5}", "--json"])
    out = capsys.readouterr().out
    assert code == 0
    doc = json.loads(out.strip().splitlines()[-1])
    assert doc["new_env"]["CM_DOWNLOAD_PATH"].endswith("asset.bin")

    flipped = ("0" if true_md5[0] != "0" else "1") + true_md5[1:]
    code = main(["run", "script", "download file _curl", "--force",
                 f"--url=file://{payload}",
                 f"--env.CM_DOWNLOAD_CHECKSUM={flipped}", "--json"])
    out = capsys.readouterr().out
    assert code == 1
    doc = json.loads(out.strip().splitlines()[-1])
    assert doc["error_class"] == "checksum-mismatch"
    caches = CacheStore(Registry(home)).entries()
    assert all("download" not in e.tags or e.env_snapshot.get(
        "CM_DOWNLOAD_PATH", "").endswith("asset.bin") for e in caches)
    ok("recipe-level download honors the checksum gate end to end")


# ---------------------------------------------------------------------------
# 8. codegen determinism & faithfulness
# ---------------------------------------------------------------------------

def test_codegen_determinism_and_faithfulness(tmp_path, monkeypatch, capsys):
    fixture = tmp_path / "pipe"
    write_repo_descriptor(fixture, "fixture@pipe")
    write_recipe(fixture, "warm-a", {
        "uid": "aa" * 8, "tags": ["warm", "alpha"], "cacheable": True})
    write_recipe(fixture, "warm-b", {
        "uid": "bb" * 8, "tags": ["warm", "beta"], "cacheable": True,
        "deps": [{"tags": "warm,alpha"}]})
    write_recipe(fixture, "warm-entry", {
        "uid": "cc" * 8, "tags": ["warm", "entry"], "cacheable": True,
        "deps": [{"tags": "warm,alpha"}, {"tags": "warm,beta"}]})
    mirror = tmp_path / "mirror"
    mirror.mkdir()
    shutil.copytree(fixture, mirror / "fixture@pipe")
    monkeypatch.setenv("TAGRUN_REPO_MIRROR", str(mirror))

    monkeypatch.setenv("TAGRUN_HOME", str(tmp_path / "home-a"))
    assert main(["pull", "repo", "fixture@pipe"]) == 0
    capsys.readouterr()
    runner = Runner(Registry())
    plan = runner.plan(parse_query("warm entry"))
    readme = generate_readme(plan)
    container = generate_containerfile(plan)
    assert readme == generate_readme(plan)
    assert container == generate_containerfile(plan)

    planned = [(s.uid, s.variations) for s in plan.steps]
    monkeypatch.setenv("TAGRUN_HOME", str(tmp_path / "home-b"))
    executed = []
    in_block = False
    for line in readme.splitlines():
        if line.strip() == "```bash":
            in_block = True
            continue
        if line.strip() == "```":
            in_block = False
            continue
        if not in_block:
            continue
        argv = shlex.split(line)
        code = main(argv[1:] + ["--json"])
        out = capsys.readouterr().out
        assert code == 0, line
        if argv[1] == "run":
            doc = json.loads(out.strip().splitlines()[-1])
            executed.extend((e["uid"], tuple(e["variations"]))
                            for e in doc["log"] if e["type"] == "script_run")
    assert executed == planned
    ok("codegen byte-deterministic; README replay reproduced the "
       f"{len(planned)}-step plan exactly")


# ---------------------------------------------------------------------------
# 9. derived metrics
# ---------------------------------------------------------------------------

def test_derived_metric_quotients_100_fixtures():
    from tagrun.experiment import ExperimentEntry, derive_metric
    rng = random.Random(31337)
    worst = 0.0
    for _ in range(100):
        throughput = rng.uniform(1e-3, 1e6)
        power = rng.uniform(1e-3, 1e4)
        cost_rate = rng.uniform(1e-6, 100.0)
        entry = ExperimentEntry(
            uid="ab" * 8, alias=None, tags=frozenset(),
            metrics={"throughput": throughput, "power": power,
                     "cost_rate": cost_rate})
        ee = derive_metric(entry, "energy_efficiency")
        cpr = derive_metric(entry, "cost_per_result")
        for got, want in ((ee, throughput / power),
                          (cpr, cost_rate / throughput)):
            rel = abs(got - want) / abs(want)
            worst = max(worst, rel)
            assert rel <= 1e-12
    ok(f"derived metrics match independent quotients "
       f"(worst relative error {worst:.1e})")
