"""Task files: built-in suite, validation errors, reset distributions."""

import pytest
import yaml

from dexgen.tasks import (
    BUILTIN_NAMES,
    TaskError,
    builtin_path,
    builtin_suite,
    load_task,
    loads_task,
)
from dexgen.world import World

from conftest import task


def _raw(name):
    return yaml.safe_load(builtin_path(name).read_text())


def test_suite_has_five_valid_tasks():
    suite = builtin_suite()
    assert [t.name for t in suite] == list(BUILTIN_NAMES)
    assert len(suite) == 5


def test_tray_lift_has_one_group_spanning_final_subtasks():
    t = load_task(builtin_path("tray-lift"))
    groups = t.coordination_groups()
    assert list(groups) == ["lift"]
    for arm, st in groups["lift"].items():
        assert st.index == len(t.subtasks[arm]) - 1
        assert st.coordination.scheme == "transform"


def test_archetypes():
    assert not task("two-bin-sort").coordination_groups()
    assert not task("two-bin-sort").sequential_constraints
    assert task("handover-sort").coordination_groups()["handover"]["left"].coordination.scheme == "replay"
    assert len(task("pour-then-place").sequential_constraints) == 1
    assert "D2" in task("pour-then-place").reset_distributions
    drawer = task("drawer-cleanup")
    assert drawer.objects["drawer"].articulation is not None
    assert len(drawer.sequential_constraints) == 1


def test_cyclic_ordering_rejected():
    raw = _raw("pour-then-place")
    # right:1 before left:0 closes a cycle with left:1 before right:0
    raw["sequential_constraints"].append({"pre": ["right", 1], "post": ["left", 0]})
    with pytest.raises(TaskError, match="cyclic ordering"):
        loads_task(yaml.safe_dump(raw))


def test_unknown_object_named():
    raw = _raw("pour-then-place")
    raw["subtasks"]["left"][0]["reference"] = "cupX"
    with pytest.raises(TaskError, match="cupX"):
        loads_task(yaml.safe_dump(raw))


def test_parse_error_reports_location():
    with pytest.raises(TaskError, match=r"line \d+"):
        loads_task("name: x\nobjects: [\n  - {id: a\n")


def test_missing_field_named():
    raw = _raw("two-bin-sort")
    del raw["success"]
    with pytest.raises(TaskError, match="success"):
        loads_task(yaml.safe_dump(raw))


def test_constraint_on_same_arm_rejected():
    raw = _raw("pour-then-place")
    raw["sequential_constraints"] = [{"pre": ["left", 0], "post": ["left", 1]}]
    with pytest.raises(TaskError):
        loads_task(yaml.safe_dump(raw))


def test_coordination_group_needs_both_arms():
    raw = _raw("tray-lift")
    del raw["subtasks"]["right"][-1]["coordination"]
    with pytest.raises(TaskError, match="lift"):
        loads_task(yaml.safe_dump(raw))


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_d1_doubles_d0(name):
    t = task(name)
    d0, d1 = t.reset_distributions["D0"], t.reset_distributions["D1"]
    for oid, r in d0.items():
        assert d1[oid].center == r.center
        assert d1[oid].half_range == tuple(2 * h for h in r.half_range)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_tasks_never_start_solved(name):
    t = task(name)
    w = World(t)
    assert not any(w.check_success(w.reset("D0", seed)) for seed in range(1000))
