from __future__ import annotations

import functools
import math

import pytest

from dexgen.demo import SegmentedDemo, SourceDemo, scripted_expert, segment
from dexgen.geometry import Pose, compose, invert, quat_distance
from dexgen.tasks import TaskSpec, builtin_task, parse_task

# source counts per embodiment: ten for gripper tasks, five for dexterous ones
N_SOURCES = {"gripper": 10, "dexterous": 5}


@functools.lru_cache(maxsize=None)
def task(name: str) -> TaskSpec:
    return builtin_task(name)


@functools.lru_cache(maxsize=None)
def source_demos(name: str, n: int | None = None) -> tuple[SourceDemo, ...]:
    t = task(name)
    n = n or N_SOURCES[t.embodiment]
    return tuple(scripted_expert(t, 1000 + i, demo_id=f"{name}-src{i}") for i in range(n))


@functools.lru_cache(maxsize=None)
def segmented_demos(name: str, n: int | None = None) -> tuple[SegmentedDemo, ...]:
    t = task(name)
    return tuple(segment(d, t) for d in source_demos(name, n))


def zero_width(name: str) -> TaskSpec:
    """Built-in task whose D0 resets are deterministic (nominal poses)."""
    raw = dict(task(name).raw)
    raw["reset_distributions"] = {
        v: {oid: {**r, "half_range": [0.0, 0.0, 0.0]} for oid, r in ranges.items()}
        for v, ranges in raw["reset_distributions"].items()
    }
    return parse_task(raw)


def pose_gap(a: Pose, b: Pose) -> float:
    """Max of position distance and rotation angle between two poses."""
    return max(math.dist(a.pos, b.pos), quat_distance(a.quat, b.quat))


def relative(a: Pose, b: Pose) -> Pose:
    return compose(invert(a), b)


# -- acceptance reporting ------------------------------------------------------------

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    n, title = marker.args
    entry = _CRITERIA.setdefault(n, {"title": title, "ok": True, "details": []})
    if not rep.passed:
        entry["ok"] = False
    entry["details"] += [v for k, v in item.user_properties if k == "detail" and rep.when == "call"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.write_sep("=", "acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        status = "PASS" if e["ok"] else "FAIL"
        detail = "; ".join(e["details"])
        tr.write_line(f"criterion {n:2d} {status}: {e['title']}" + (f" | {detail}" if detail else ""))
