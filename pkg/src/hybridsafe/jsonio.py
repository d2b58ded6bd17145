"""Canonical JSON output: keys sorted, floats at 17 significant digits.

The stdlib json module cannot format floats, so this tiny dumper exists to
make serialized reports byte-identical across runs for golden-file tests.
"""

from __future__ import annotations

import math


def _fmt_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        raise ValueError(f"non-finite number in canonical JSON: {x}")
    if x == int(x) and abs(x) < 1e16:
        return f"{x:.1f}"
    return f"{x:.17g}"


def dumps(obj, indent: int = 0, _level: int = 0) -> str:
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _fmt_float(obj)
    if isinstance(obj, str):
        out = ['"']
        for ch in obj:
            if ch == '"':
                out.append('\\"')
            elif ch == "\\":
                out.append("\\\\")
            elif ch == "\n":
                out.append("\\n")
            elif ch == "\t":
                out.append("\\t")
            elif ch == "\r":
                out.append("\\r")
            elif ord(ch) < 0x20:
                out.append(f"\\u{ord(ch):04x}")
            else:
                out.append(ch)
        out.append('"')
        return "".join(out)
    nl, pad, pad1 = "", "", ""
    if indent:
        nl = "\n"
        pad = " " * (indent * (_level + 1))
        pad1 = " " * (indent * _level)
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [dumps(v, indent, _level + 1) for v in obj]
        return "[" + nl + ("," + nl).join(pad + it for it in items) + nl + pad1 + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = []
        for k in sorted(obj):
            if not isinstance(k, str):
                raise TypeError(f"canonical JSON keys must be strings: {k!r}")
            items.append(pad + dumps(k) + ": " + dumps(obj[k], indent, _level + 1))
        return "{" + nl + ("," + nl).join(items) + nl + pad1 + "}"
    # numpy scalars and similar duck-typed numbers
    if hasattr(obj, "item"):
        return dumps(obj.item(), indent, _level)
    raise TypeError(f"cannot serialize {type(obj).__name__} canonically")
