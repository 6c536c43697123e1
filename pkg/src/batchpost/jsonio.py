"""Canonical JSON output: sorted keys, fixed float formatting.

Machine outputs must be byte-stable across runs and platforms, so floats
are rendered with a fixed significant-digit format instead of repr. The
default is 6 significant digits; artifact writers that need lossless
round-trips pass precision=17.
"""

from __future__ import annotations

import math
from typing import Any, IO

import numpy as np


def format_float(x: float, precision: int = 6) -> str:
    if math.isnan(x) or math.isinf(x):
        raise ValueError(f"non-finite float in canonical JSON output: {x}")
    if x == 0.0:
        return "0"
    return f"{x:.{precision}g}"


def _encode(obj: Any, parts: list, precision: int) -> None:
    if obj is None:
        parts.append("null")
    elif obj is True:
        parts.append("true")
    elif obj is False:
        parts.append("false")
    elif isinstance(obj, str):
        import json as _json

        parts.append(_json.dumps(obj))
    elif isinstance(obj, (int, np.integer)):
        parts.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        parts.append(format_float(float(obj), precision))
    elif isinstance(obj, dict):
        parts.append("{")
        first = True
        for key in sorted(obj.keys()):
            if not isinstance(key, str):
                raise TypeError(f"JSON object keys must be str, got {type(key)}")
            if not first:
                parts.append(",")
            first = False
            _encode(key, parts, precision)
            parts.append(":")
            _encode(obj[key], parts, precision)
        parts.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        if isinstance(obj, np.ndarray):
            obj = obj.tolist()
        parts.append("[")
        for i, item in enumerate(obj):
            if i:
                parts.append(",")
            _encode(item, parts, precision)
        parts.append("]")
    else:
        raise TypeError(f"cannot canonically encode {type(obj)}")


def dumps_canonical(obj: Any, precision: int = 6) -> str:
    """Serialize to a single-line canonical JSON string."""
    parts: list = []
    _encode(obj, parts, precision)
    return "".join(parts)


def dump_canonical(obj: Any, fp: IO[str], precision: int = 6) -> None:
    fp.write(dumps_canonical(obj, precision))
    fp.write("\n")
