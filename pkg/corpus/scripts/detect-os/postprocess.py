#!/usr/bin/env python3
"""Export the host platform facts the framework already detected."""
import json
import sys

ctx = json.load(sys.stdin)
platform = ctx["platform"]
print(json.dumps({
    "env_additions": {
        "CM_HOST_OS_FAMILY": platform["os_family"],
        "CM_HOST_ARCH": platform["arch"],
        "CM_HOST_DISTRO": platform.get("distro") or "",
    },
    "return_code": 0,
}))
