"""Topic names, subscription filters and matching.

Topic levels are '/'-separated UTF-8 segments. '+' matches exactly one
segment and '#' any suffix (including none); both are legal only in
subscription filters, '#' only as the final segment.

The canonical stage namespace is cypha/stage{N}/{sensing|actuating|manual};
the flat StageNSensing / StageNActuating / StageNManualActuating names are
accepted as synonyms and normalised on entry to the broker.
"""

from __future__ import annotations

import re
from functools import lru_cache

MAX_PAYLOAD = 64 * 1024

_SYNONYM = re.compile(r"^Stage(\d+)(Sensing|Actuating|ManualActuating)$")
_SUFFIX = {"Sensing": "sensing", "Actuating": "actuating", "ManualActuating": "manual"}


def canonical(topic: str) -> str:
    """Map paper-style flat names onto the cypha/... namespace."""
    m = _SYNONYM.match(topic)
    if m:
        return f"cypha/stage{m.group(1)}/{_SUFFIX[m.group(2)]}"
    return topic


@lru_cache(maxsize=4096)
def checked_topic(topic: str) -> str:
    """canonical() + publish-topic validation, memoised for the hot path."""
    topic = canonical(topic)
    validate_topic(topic)
    return topic


def validate_topic(topic: str) -> None:
    """A publishable topic: non-empty segments, no wildcards."""
    _validate_segments(topic, allow_wildcards=False)


def validate_filter(filt: str) -> None:
    """A subscription filter: wildcards allowed, '#' only last."""
    _validate_segments(filt, allow_wildcards=True)


def _validate_segments(name: str, allow_wildcards: bool) -> None:
    if not name:
        raise ValueError("empty topic")
    segments = name.split("/")
    for i, seg in enumerate(segments):
        if seg == "":
            raise ValueError(f"empty segment in {name!r}")
        if seg == "#":
            if not allow_wildcards:
                raise ValueError(f"wildcard in topic name {name!r}")
            if i != len(segments) - 1:
                raise ValueError(f"'#' must be the final segment in {name!r}")
        elif seg == "+":
            if not allow_wildcards:
                raise ValueError(f"wildcard in topic name {name!r}")
        elif "#" in seg or "+" in seg:
            raise ValueError(f"wildcard must stand alone in segment {seg!r}")


def match(filt: str, topic: str) -> bool:
    """Standard MQTT filter matching over already-valid names."""
    return match_segments(filt.split("/"), topic.split("/"))


def match_segments(fsegs: list[str], tsegs: list[str]) -> bool:
    """Matching over pre-split names; the broker caches the splits."""
    n = len(tsegs)
    for i, fseg in enumerate(fsegs):
        if fseg == "#":
            # Matches any suffix, including none ("a/#" matches "a").
            return True
        if i >= n:
            return False
        if fseg == "+":
            continue
        if fseg != tsegs[i]:
            return False
    return n == len(fsegs)


def stage_topic(stage: str, role: str) -> str:
    """cypha/stage{N}/{sensing|actuating|manual} for a stage id like 'S2'."""
    n = stage[1:] if stage.upper().startswith("S") else stage
    return f"cypha/stage{n}/{role}"
