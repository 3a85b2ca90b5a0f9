#!/usr/bin/env python3
"""Verify the fetched file against CM_DOWNLOAD_CHECKSUM (MD5), then export it.

On a digest mismatch the file is deleted and the failure is reported with
both digests; the recipe run aborts and nothing is cached.
"""
import hashlib
import json
import os
import sys

ctx = json.load(sys.stdin)
env = ctx["env"]
url = env.get("CM_DOWNLOAD_URL", "")
name = url.rstrip("/").rsplit("/", 1)[-1] or "download"
path = os.path.join(ctx["workdir"], name)
if not os.path.isfile(path):
    print(json.dumps({"return_code": 1, "error_class": "download-failed",
                      "message": f"no file was fetched for {url}"}))
    raise SystemExit(0)

expected = env.get("CM_DOWNLOAD_CHECKSUM", "").strip().lower()
if expected:
    with open(path, "rb") as fh:
        actual = hashlib.md5(fh.read()).hexdigest()
    if actual != expected:
        os.unlink(path)
        print(json.dumps({
            "return_code": 1,
            "error_class": "checksum-mismatch",
            "message": f"expected {expected}, got {actual} (file removed)",
        }))
        raise SystemExit(0)

print(json.dumps({"env_additions": {"CM_DOWNLOAD_PATH": path},
                  "return_code": 0}))
