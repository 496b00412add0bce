"""Deterministic JSON output: floats rounded to 9 significant digits."""

from __future__ import annotations

import json
import math

import numpy as np


def _round(obj):
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError(f"cannot serialise non-finite value {x}")
        x = float(f"{x:.9g}")
        return 0.0 if x == 0 else x
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _round(obj.tolist())
    if isinstance(obj, dict):
        return {str(k): _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    return obj


def dumps(obj, indent: int | None = 1) -> str:
    return json.dumps(_round(obj), indent=indent, sort_keys=False) + "\n"
