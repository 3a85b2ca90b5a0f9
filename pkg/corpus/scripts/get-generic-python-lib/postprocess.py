#!/usr/bin/env python3
import json
import sys

ctx = json.load(sys.stdin)
pkg = ctx["env"].get("CM_PYTHON_PACKAGE", "")
print(json.dumps({
    "env_additions": {
        "CM_PYTHON_LIB": pkg,
        "CM_PYTHON_LIB_VERSION": "1.0.0-stub",
    },
    "return_code": 0,
}))
