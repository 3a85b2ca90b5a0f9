"""Cache probe/store/invalidate semantics and plan-digest keying."""

from __future__ import annotations

import pytest

from tagrun.cache import CacheEntry, CacheStore, dep_signature
from tagrun.errors import ConfirmationRequired
from tagrun.query import parse_query
from tagrun.registry import Registry


def make_entry(store: CacheStore, tags, signature="sig", created_at=None,
               env=None, version=None) -> CacheEntry:
    uid, directory = store.new_payload_dir()
    (directory / "payload.txt").write_text("data", encoding="utf-8")
    entry = CacheEntry(uid=uid, alias=None, tags=frozenset(tags),
                       dir=directory, env_snapshot=dict(env or {}),
                       dep_signature=signature, version=version)
    if created_at is not None:
        entry.created_at = created_at
    store.store(entry)
    return entry


@pytest.fixture
def store(registry) -> CacheStore:
    return CacheStore(registry)


def test_probe_store_coherence(store):
    entry = make_entry(store, {"ml-model", "resnet50", "_fp32", "_onnx"},
                       env={"CM_ML_MODEL_FILE": "/x"})
    hit = store.probe(frozenset({"ml-model", "resnet50", "_fp32"}), "sig")
    assert hit is not None and hit.uid == entry.uid
    assert hit.env_snapshot == {"CM_ML_MODEL_FILE": "/x"}


def test_probe_empty_cache_misses(store):
    assert store.probe(frozenset({"anything"}), "sig") is None


def test_probe_requires_entry_side_superset(store):
    make_entry(store, {"a"})
    assert store.probe(frozenset({"a", "b"}), "sig") is None
    assert store.probe(frozenset({"a"}), "sig") is not None


def test_probe_requires_signature_match(store):
    make_entry(store, {"a"}, signature="one")
    assert store.probe(frozenset({"a"}), "other") is None


def test_newest_entry_wins(store):
    make_entry(store, {"a"}, created_at=100.0, env={"W": "old"})
    make_entry(store, {"a"}, created_at=200.0, env={"W": "new"})
    hit = store.probe(frozenset({"a"}), "sig")
    assert hit.env_snapshot["W"] == "new"


def test_probe_version_bounds_filter(store):
    make_entry(store, {"tool"}, version="3.8.9")
    assert store.probe(frozenset({"tool"}), "sig",
                       version_min="3.9.1") is None
    make_entry(store, {"tool"}, version="3.10.2", created_at=999.0)
    hit = store.probe(frozenset({"tool"}), "sig", version_min="3.9.1")
    assert hit.version == "3.10.2"
    assert f"version-3.10.2" in hit.tags


def test_interrupted_store_leaves_no_entry(store, monkeypatch):
    uid, directory = store.new_payload_dir()
    (directory / "payload.txt").write_text("data", encoding="utf-8")
    entry = CacheEntry(uid=uid, alias=None, tags=frozenset({"a"}),
                       dir=directory, env_snapshot={}, dep_signature="sig")

    def explode(directory, doc):
        raise OSError("disk full")

    monkeypatch.setattr(CacheStore, "_write_meta", staticmethod(explode))
    with pytest.raises(OSError):
        store.store(entry)
    monkeypatch.undo()
    fresh = Registry(store.registry.home)
    assert fresh.scan("cache") == []
    assert CacheStore(fresh).probe(frozenset({"a"}), "sig") is None


def test_invalidate_by_variation_tag(store):
    make_entry(store, {"ml-model", "_fp32"})
    make_entry(store, {"ml-model", "_int8"})
    removed = store.invalidate(parse_query("_fp32"), interactive=False)
    assert removed == 1
    left = store.entries()
    assert len(left) == 1 and "_int8" in left[0].tags


def test_invalidate_on_empty_cache_is_zero(store):
    assert store.invalidate(parse_query("anything"), interactive=False) == 0


def test_wipe_needs_force_and_is_complete(store):
    make_entry(store, {"a"})
    make_entry(store, {"b"})
    with pytest.raises(ConfirmationRequired):
        store.invalidate(parse_query(""), interactive=False)
    assert store.invalidate(parse_query(""), force=True,
                            interactive=False) == 2
    assert store.entries() == []
    assert store.probe(frozenset(), "sig") is None
    leftover_dirs = [p for p in store.cache_root.iterdir()] \
        if store.cache_root.is_dir() else []
    assert leftover_dirs == []


def test_dep_signature_sensitive_to_any_perturbation():
    base = [("u1", ("fp32", "onnx"), None, None), ("u2", (), "3.9", None)]
    reference = dep_signature(base)
    perturbations = [
        [("u1-changed", ("fp32", "onnx"), None, None), base[1]],
        [("u1", ("fp32",), None, None), base[1]],
        [("u1", ("fp32", "onnx", "int8"), None, None), base[1]],
        [base[0], ("u2", (), "3.10", None)],
        [base[0], ("u2", (), "3.9", "4.0")],
        [base[0]],
        [base[1], base[0]],
    ]
    for steps in perturbations:
        assert dep_signature(steps) != reference
    assert dep_signature([("u1", ("onnx", "fp32"), None, None), base[1]]) \
        == reference  # variation ORDER is canonicalized by sorting


# ---------------------------------------------------------------------------
# through the executor
# ---------------------------------------------------------------------------

def test_second_run_hits_cache_with_zero_subprocesses(make_runner):
    first = make_runner()
    r1 = first.run(parse_query("get ml-model resnet50 _fp32 _onnx"))
    assert not r1.from_cache

    second = make_runner()
    r2 = second.run(parse_query("get ml-model resnet50 _fp32 _onnx"))
    assert r2.from_cache
    assert second.log.subprocess_count() == 0
    assert second.log.executed_scripts() == []
    assert r2.new_env == r1.new_env  # cache soundness, key for key


def test_variation_order_does_not_break_reuse(make_runner):
    make_runner().run(parse_query("get ml-model resnet50 _fp32 _onnx"))
    rerun = make_runner()
    result = rerun.run(parse_query("get ml-model resnet50 _onnx _fp32"))
    assert result.from_cache


def test_cross_pipeline_reuse_single_execution(make_runner, tmp_path,
                                               monkeypatch):
    getter_uid = "5b4e0237da074764"
    first = make_runner()
    first.run(parse_query("get ml-model resnet50 _onnx"))
    executions = [uid for uid, _ in first.log.executed_scripts()
                  if uid == getter_uid]
    assert executions == [getter_uid]

    monkeypatch.chdir(tmp_path)
    (tmp_path / "mouse.jpg").write_bytes(b"stub")
    app = make_runner()
    app.run(parse_query("python app image-classification onnx _cpu"),
            inputs={"input": "mouse.jpg"})
    assert all(uid != getter_uid for uid, _ in app.log.executed_scripts())
    assert any(e["type"] == "cache_hit" and e["uid"] == getter_uid
               for e in app.log.events)


def test_force_rerun_bypasses_cache(make_runner):
    make_runner().run(parse_query("get sys-utils-cm"))
    forced = make_runner(force_rerun=True)
    result = forced.run(parse_query("get sys-utils-cm"))
    assert not result.from_cache
    assert forced.log.subprocess_count() > 0


def test_invalidation_forces_reexecution(make_runner, seeded):
    make_runner().run(parse_query("get ml-model resnet50 _fp32 _onnx"))
    store = CacheStore(seeded)
    assert store.invalidate(parse_query("ml-model"), interactive=False) == 1
    rerun = make_runner()
    result = rerun.run(parse_query("get ml-model resnet50 _fp32 _onnx"))
    assert not result.from_cache
    assert rerun.log.subprocess_count() > 0
