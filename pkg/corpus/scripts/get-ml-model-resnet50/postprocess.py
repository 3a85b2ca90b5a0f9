#!/usr/bin/env python3
"""Export the staged model file and its configuration."""
import json
import os
import sys

ctx = json.load(sys.stdin)
env = ctx["env"]
fmt = env.get("CM_ML_MODEL_FORMAT", "raw")
model = os.path.join(ctx["workdir"], f"model.{fmt}")
if not os.path.isfile(model):
    print(json.dumps({"return_code": 1,
                      "message": f"model file {model} was not produced"}))
    raise SystemExit(0)
additions = {
    "CM_ML_MODEL_FILE": model,
    "CM_ML_MODEL_FORMAT": fmt,
    "CM_ML_MODEL_PRECISION": env.get("CM_ML_MODEL_PRECISION", "fp32"),
}
if env.get("CM_ML_MODEL_QUANTIZED"):
    additions["CM_ML_MODEL_QUANTIZED"] = env["CM_ML_MODEL_QUANTIZED"]
print(json.dumps({"env_additions": additions, "return_code": 0}))
