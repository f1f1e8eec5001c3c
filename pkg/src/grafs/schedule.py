"""Log-spaced dropping schedule for progressive search-space shrinking."""

from __future__ import annotations

import math

__all__ = ["build_shrink_schedule", "ScheduleError", "FULL_SPACE", "FINAL_OPS"]

FULL_SPACE = 110  # 4 edges x 23 unary ops + 2 vertices x 9 binary ops
FINAL_OPS = 6


class ScheduleError(Exception):
    pass


def build_shrink_schedule(total=FULL_SPACE, final=FINAL_OPS, start=2, end=50):
    """Per-epoch drop counts D_e for e in [start, end].

    total - final points are placed with logarithmic spacing between start
    and end, then binned into unit intervals: D_e counts the points whose
    floor is e, with the closing point at exactly `end` assigned to epoch
    `end`. Early epochs therefore carry more drops. The counts always sum
    to total - final.
    """
    if end <= start:
        raise ScheduleError(f"end epoch must exceed start epoch, got start={start} end={end}")
    if start < 1:
        raise ScheduleError(f"start epoch must be >= 1 for log spacing, got {start}")
    if final > total:
        raise ScheduleError(f"final={final} exceeds total={total}")
    counts = {e: 0 for e in range(start, end + 1)}
    n = total - final
    if n == 0:
        return counts
    log_s, log_e = math.log(start), math.log(end)
    for i in range(1, n + 1):
        if i == n:
            counts[end] += 1  # p_n == end analytically; avoid float drift
            continue
        p = math.exp(log_s + (i - 1) / (n - 1) * (log_e - log_s))
        e = min(max(int(math.floor(p)), start), end)
        counts[e] += 1
    return counts
