from __future__ import annotations

import heapq
from typing import Sequence

from squashloc.detect import Detection
from squashloc.localize import EventGroup


def match_detections(per_channel: Sequence[Sequence[Detection]], max_spread: float,
                     min_channels: int = 4) -> list[tuple[EventGroup, list[Detection]]]:
    """Group per-channel detections that can stem from one physical event.

    Sweeping the merged timeline, the earliest unused detection seeds a
    group; every other channel contributes its earliest unused detection no
    more than ``max_spread`` samples after the seed. Groups with fewer than
    ``min_channels`` members are dropped and only their seed is consumed.
    """
    merged = list(heapq.merge(*per_channel, key=lambda d: (d.sample_index, d.channel)))
    used = [False] * len(merged)
    groups = []
    for i, seed in enumerate(merged):
        if used[i]:
            continue
        used[i] = True
        members = {seed.channel: (i, seed)}
        for j in range(i + 1, len(merged)):
            other = merged[j]
            if other.sample_index - seed.sample_index > max_spread:
                break
            if used[j] or other.channel in members:
                continue
            members[other.channel] = (j, other)
        if len(members) < min_channels:
            continue
        for j, _ in members.values():
            used[j] = True
        dets = sorted((d for _, d in members.values()), key=lambda d: d.channel)
        groups.append((EventGroup({d.channel: d.sample_index for d in dets}), dets))
    return groups
