"""Fixed-width summary tables from JSON-lines evaluation reports."""

from __future__ import annotations

import json

__all__ = ["render_report"]


def render_report(jsonl: str) -> str:
    """Rows sorted by top-1 error ascending, four decimals, aligned columns."""
    rows = []
    for lineno, line in enumerate(jsonl.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            rows.append((str(rec["method"]), float(rec["top1_error"]), int(rec["n"])))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ValueError(f"line {lineno}: malformed record ({e})") from None
    rows.sort(key=lambda r: r[1])
    name_w = max([len("method")] + [len(r[0]) for r in rows]) + 2
    out = [f"{'method':<{name_w}}{'top1_error':>10}{'n':>8}"]
    for method, err, n in rows:
        out.append(f"{method:<{name_w}}{err:>10.4f}{n:>8}")
    return "\n".join(out) + "\n"
