"""Declarative task definitions: objects, per-arm subtasks, resets, success."""

from __future__ import annotations

import graphlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from dexgen.geometry import Pose, Vec3

ARMS = ("left", "right")
EMBODIMENTS = ("gripper", "dexterous")
SCHEMES = ("transform", "replay")
TERMINATIONS = ("attach", "detach", "enter_region", "joint_above")
PREDICATES = ("all", "any", "contained_in", "within_box", "distance_below", "height_above", "joint_above")
TOP_LEVEL_KEYS = (
    "name",
    "embodiment",
    "objects",
    "arms",
    "subtasks",
    "sequential_constraints",
    "reset_distributions",
    "success",
    "max_episode_steps",
)
BUILTIN_NAMES = ("two-bin-sort", "tray-lift", "handover-sort", "pour-then-place", "drawer-cleanup")
DEXTEROUS_JOINTS = 6


class TaskError(ValueError):
    """Task file could not be parsed or failed validation."""


@dataclass(frozen=True)
class ContainerSpec:
    half_extents: tuple[float, float]
    floor: float  # local z of the floor surface


@dataclass(frozen=True)
class ArticulationSpec:
    axis: Vec3
    limits: tuple[float, float]
    initial: float


@dataclass(frozen=True)
class ObjectSpec:
    id: str
    kind: str
    size: Vec3
    graspable: bool = False
    grasps: tuple[Vec3, ...] = ()
    container: ContainerSpec | None = None
    articulation: ArticulationSpec | None = None
    inside: str | None = None


@dataclass(frozen=True)
class Termination:
    kind: str
    object: str
    container: str | None = None
    value: float | None = None


@dataclass(frozen=True)
class Coordination:
    group: str
    scheme: str


@dataclass(frozen=True)
class SubtaskSpec:
    arm: str
    index: int
    reference: str
    termination: Termination | str | None  # None only on an arm's last subtask
    coordination: Coordination | None = None
    name: str = ""


@dataclass(frozen=True)
class SequentialConstraint:
    pre: tuple[str, int]
    post: tuple[str, int]


@dataclass(frozen=True)
class ResetRange:
    center: tuple[float, float, float]  # x, y, yaw
    half_range: tuple[float, float, float]


@dataclass(frozen=True)
class Predicate:
    op: str
    args: dict = field(default_factory=dict)
    children: tuple["Predicate", ...] = ()

    def objects(self) -> set[str]:
        out = {v for k, v in self.args.items() if k in ("object", "container", "reference") and v}
        for c in self.children:
            out |= c.objects()
        return out


@dataclass(frozen=True, eq=False)
class TaskSpec:
    name: str
    embodiment: str
    hand_limits: tuple[float, float]
    objects: dict[str, ObjectSpec]
    homes: dict[str, Pose]
    subtasks: dict[str, tuple[SubtaskSpec, ...]]
    sequential_constraints: tuple[SequentialConstraint, ...]
    reset_distributions: dict[str, dict[str, ResetRange]]
    success: Predicate
    max_episode_steps: int
    raw: dict = field(repr=False)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TaskSpec) and self.raw == other.raw

    def coordination_groups(self) -> dict[str, dict[str, SubtaskSpec]]:
        groups: dict[str, dict[str, SubtaskSpec]] = {}
        for arm in ARMS:
            for st in self.subtasks[arm]:
                if st.coordination is not None:
                    groups.setdefault(st.coordination.group, {})[arm] = st
        return groups

    def to_dict(self) -> dict:
        return self.raw


# -- parsing -----------------------------------------------------------------


def _need(d: Any, key: str, where: str) -> Any:
    if not isinstance(d, dict):
        raise TaskError(f"{where}: expected a mapping")
    if key not in d:
        raise TaskError(f"{where}: missing field '{key}'")
    return d[key]


def _floats(v: Any, n: int, where: str) -> tuple[float, ...]:
    if not isinstance(v, (list, tuple)) or len(v) != n or not all(isinstance(x, (int, float)) for x in v):
        raise TaskError(f"{where}: expected {n} numbers, got {v!r}")
    return tuple(float(x) for x in v)


def _pose(d: Any, where: str) -> Pose:
    pos = _floats(_need(d, "pos", where), 3, f"{where}.pos")
    quat = _floats(d.get("quat", [1, 0, 0, 0]), 4, f"{where}.quat")
    try:
        return Pose(pos, quat)
    except ValueError as e:
        raise TaskError(f"{where}: {e}") from None


def _object(d: Any, where: str) -> ObjectSpec:
    oid = _need(d, "id", where)
    kind = d.get("kind", "free")
    if kind not in ("free", "articulated"):
        raise TaskError(f"{where}.kind: expected free or articulated, got {kind!r}")
    container = None
    if d.get("container") is not None:
        c = d["container"]
        container = ContainerSpec(
            _floats(_need(c, "half_extents", f"{where}.container"), 2, f"{where}.container.half_extents"),
            float(_need(c, "floor", f"{where}.container")),
        )
    articulation = None
    if kind == "articulated":
        a = _need(d, "articulation", where)
        lo, hi = _floats(_need(a, "limits", f"{where}.articulation"), 2, f"{where}.articulation.limits")
        if lo > hi:
            raise TaskError(f"{where}.articulation.limits: lower limit above upper")
        articulation = ArticulationSpec(
            _floats(_need(a, "axis", f"{where}.articulation"), 3, f"{where}.articulation.axis"),
            (lo, hi),
            float(a.get("initial", lo)),
        )
    grasps = tuple(_floats(g, 3, f"{where}.grasps[{i}]") for i, g in enumerate(d.get("grasps", [])))
    return ObjectSpec(
        id=str(oid),
        kind=kind,
        size=_floats(_need(d, "size", where), 3, f"{where}.size"),
        graspable=bool(d.get("graspable", bool(grasps))),
        grasps=grasps,
        container=container,
        articulation=articulation,
        inside=d.get("inside"),
    )


def _termination(v: Any, where: str) -> Termination | str | None:
    if v is None or v == "end":
        return None
    if v == "manual":
        return "manual"
    if not isinstance(v, dict) or len(v) != 1:
        raise TaskError(f"{where}: expected one of {TERMINATIONS}, 'manual' or 'end'")
    ((kind, arg),) = v.items()
    if kind not in TERMINATIONS:
        raise TaskError(f"{where}: unknown termination '{kind}'")
    if kind in ("attach", "detach"):
        return Termination(kind, str(arg))
    if kind == "enter_region":
        return Termination(kind, str(_need(arg, "object", where)), container=str(_need(arg, "container", where)))
    return Termination(kind, str(_need(arg, "object", where)), value=float(_need(arg, "value", where)))


def _predicate(v: Any, where: str) -> Predicate:
    if not isinstance(v, dict) or len(v) != 1:
        raise TaskError(f"{where}: a predicate is a single-key mapping")
    ((op, arg),) = v.items()
    if op not in PREDICATES:
        raise TaskError(f"{where}: unknown predicate '{op}'")
    if op in ("all", "any"):
        if not isinstance(arg, list) or not arg:
            raise TaskError(f"{where}.{op}: expected a non-empty list")
        return Predicate(op, {}, tuple(_predicate(c, f"{where}.{op}[{i}]") for i, c in enumerate(arg)))
    if not isinstance(arg, dict):
        raise TaskError(f"{where}.{op}: expected a mapping of arguments")
    args = dict(arg)
    _need(args, "object", f"{where}.{op}")
    if op == "contained_in":
        _need(args, "container", f"{where}.{op}")
    elif op == "within_box":
        args["half_extents"] = _floats(_need(args, "half_extents", f"{where}.{op}"), 3, f"{where}.{op}.half_extents")
        args["center"] = _floats(args.get("center", [0, 0, 0]), 3, f"{where}.{op}.center")
        args["tolerance"] = float(args.get("tolerance", 0.0))
        args.setdefault("reference", None)
    elif op == "distance_below":
        _need(args, "reference", f"{where}.{op}")
        args["distance"] = float(_need(args, "distance", f"{where}.{op}"))
    elif op == "height_above":
        args["height"] = float(_need(args, "height", f"{where}.{op}"))
    elif op == "joint_above":
        args["value"] = float(_need(args, "value", f"{where}.{op}"))
    return Predicate(op, args)


def parse_task(doc: Any, source: str = "<task>") -> TaskSpec:
    """Build and validate a TaskSpec from a parsed document."""
    if not isinstance(doc, dict):
        raise TaskError(f"{source}: task document must be a mapping")
    unknown = sorted(set(doc) - set(TOP_LEVEL_KEYS))
    if unknown:
        raise TaskError(f"{source}: unknown top-level field(s) {unknown}")
    for key in TOP_LEVEL_KEYS:
        if key not in doc:
            raise TaskError(f"{source}: missing field '{key}'")

    emb = doc["embodiment"]
    hand_limits = (0.0, 1.6)
    if isinstance(emb, dict):
        hand_limits = _floats(emb.get("joint_limits", hand_limits), 2, "embodiment.joint_limits")
        emb = _need(emb, "type", "embodiment")
    if emb not in EMBODIMENTS:
        raise TaskError(f"embodiment: expected one of {EMBODIMENTS}, got {emb!r}")

    if not isinstance(doc["objects"], list):
        raise TaskError("objects: expected a list")
    objects: dict[str, ObjectSpec] = {}
    for i, od in enumerate(doc["objects"]):
        o = _object(od, f"objects[{i}]")
        if o.id in objects:
            raise TaskError(f"objects[{i}].id: duplicate object id '{o.id}'")
        objects[o.id] = o

    homes = {arm: _pose(_need(_need(doc["arms"], arm, "arms"), "home", f"arms.{arm}"), f"arms.{arm}.home") for arm in ARMS}

    subtasks: dict[str, tuple[SubtaskSpec, ...]] = {}
    for arm in ARMS:
        seq = _need(doc["subtasks"], arm, "subtasks")
        if not isinstance(seq, list) or not seq:
            raise TaskError(f"subtasks.{arm}: expected a non-empty list")
        out = []
        for i, sd in enumerate(seq):
            where = f"subtasks.{arm}[{i}]"
            coord = None
            if sd.get("coordination") is not None:
                c = sd["coordination"]
                scheme = c.get("scheme", "transform")
                if scheme not in SCHEMES:
                    raise TaskError(f"{where}.coordination.scheme: expected one of {SCHEMES}, got {scheme!r}")
                coord = Coordination(str(_need(c, "group", f"{where}.coordination")), scheme)
            out.append(
                SubtaskSpec(
                    arm=arm,
                    index=i,
                    reference=str(_need(sd, "reference", where)),
                    termination=_termination(sd.get("termination"), f"{where}.termination"),
                    coordination=coord,
                    name=str(sd.get("name", "")),
                )
            )
        subtasks[arm] = tuple(out)

    constraints = []
    for i, cd in enumerate(doc["sequential_constraints"] or []):
        where = f"sequential_constraints[{i}]"
        pre = _need(cd, "pre", where)
        post = _need(cd, "post", where)
        for label, ref in (("pre", pre), ("post", post)):
            if not (isinstance(ref, list) and len(ref) == 2 and ref[0] in ARMS and isinstance(ref[1], int)):
                raise TaskError(f"{where}.{label}: expected [arm, subtask index], got {ref!r}")
        constraints.append(SequentialConstraint((pre[0], pre[1]), (post[0], post[1])))

    resets: dict[str, dict[str, ResetRange]] = {}
    for variant, ranges in (doc["reset_distributions"] or {}).items():
        resets[str(variant)] = {}
        for oid, rd in (ranges or {}).items():
            where = f"reset_distributions.{variant}.{oid}"
            resets[str(variant)][str(oid)] = ResetRange(
                _floats(_need(rd, "center", where), 3, f"{where}.center"),
                _floats(rd.get("half_range", [0, 0, 0]), 3, f"{where}.half_range"),
            )

    steps = doc["max_episode_steps"]
    if not isinstance(steps, int) or steps < 1:
        raise TaskError(f"max_episode_steps: expected a positive integer, got {steps!r}")

    task = TaskSpec(
        name=str(doc["name"]),
        embodiment=emb,
        hand_limits=hand_limits,
        objects=objects,
        homes=homes,
        subtasks=subtasks,
        sequential_constraints=tuple(constraints),
        reset_distributions=resets,
        success=_predicate(doc["success"], "success"),
        max_episode_steps=steps,
        raw=doc,
    )
    validate_task(task)
    return task


# -- validation --------------------------------------------------------------


def _check_object(task: TaskSpec, oid: str | None, where: str) -> None:
    if oid is not None and oid not in task.objects:
        raise TaskError(f"{where}: unknown object '{oid}'")


def validate_task(task: TaskSpec) -> None:
    """Raise TaskError naming the first violated invariant."""
    for o in task.objects.values():
        if o.inside is not None:
            _check_object(task, o.inside, f"objects.{o.id}.inside")
            if task.objects[o.inside].container is None:
                raise TaskError(f"objects.{o.id}.inside: '{o.inside}' is not a container")
        if o.graspable and not o.grasps:
            raise TaskError(f"objects.{o.id}: graspable object declares no grasp points")
        if o.articulation is not None:
            lo, hi = o.articulation.limits
            if not lo <= o.articulation.initial <= hi:
                raise TaskError(f"objects.{o.id}.articulation.initial: outside joint limits")

    for arm in ARMS:
        seq = task.subtasks[arm]
        for st in seq:
            where = f"subtasks.{arm}[{st.index}]"
            _check_object(task, st.reference, f"{where}.reference")
            if isinstance(st.termination, Termination):
                _check_object(task, st.termination.object, f"{where}.termination")
                _check_object(task, st.termination.container, f"{where}.termination")
            if st.termination is None and st.index != len(seq) - 1:
                raise TaskError(f"{where}.termination: only an arm's last subtask may omit its termination")

    for gid, members in task.coordination_groups().items():
        if set(members) != set(ARMS):
            raise TaskError(f"coordination group '{gid}' must contain exactly one subtask per arm")
        left, right = members["left"], members["right"]
        if left.reference != right.reference:
            raise TaskError(f"coordination group '{gid}': members reference different objects")
        if left.coordination.scheme != right.coordination.scheme:
            raise TaskError(f"coordination group '{gid}': members declare different schemes")
    for arm in ARMS:
        gids = [st.coordination.group for st in task.subtasks[arm] if st.coordination is not None]
        if len(gids) != len(set(gids)):
            raise TaskError(f"subtasks.{arm}: an arm may appear in a coordination group only once")

    for i, c in enumerate(task.sequential_constraints):
        where = f"sequential_constraints[{i}]"
        if c.pre[0] == c.post[0]:
            raise TaskError(f"{where}: pre and post must be on different arms")
        for label, (arm, idx) in (("pre", c.pre), ("post", c.post)):
            if not 0 <= idx < len(task.subtasks[arm]):
                raise TaskError(f"{where}.{label}: subtask index {idx} out of range for arm '{arm}'")

    if ordering_cycle(task):
        raise TaskError("cyclic ordering: subtask order, sequential constraints and coordination groups form a cycle")

    for variant, ranges in task.reset_distributions.items():
        for oid in ranges:
            _check_object(task, oid, f"reset_distributions.{variant}")
        placed = set(ranges) | {o.id for o in task.objects.values() if o.inside}
        missing = sorted(set(task.objects) - placed)
        if missing:
            raise TaskError(f"reset_distributions.{variant}: no pose range for object(s) {missing}")
    if not task.reset_distributions:
        raise TaskError("reset_distributions: at least one variant is required")

    for oid in task.success.objects():
        _check_object(task, oid, "success")


def ordering_cycle(task: TaskSpec) -> bool:
    """True when the combined ordering graph is cyclic.

    Nodes are subtasks; coordination members are merged into one node since
    they must run together.
    """
    node: dict[tuple[str, int], str] = {}
    for arm in ARMS:
        for st in task.subtasks[arm]:
            node[(arm, st.index)] = f"group:{st.coordination.group}" if st.coordination else f"{arm}:{st.index}"
    ts = graphlib.TopologicalSorter()
    for arm in ARMS:
        for i in range(len(task.subtasks[arm])):
            ts.add(node[(arm, i)])
            if i > 0 and node[(arm, i - 1)] != node[(arm, i)]:
                ts.add(node[(arm, i)], node[(arm, i - 1)])
    for c in task.sequential_constraints:
        if c.pre in node and c.post in node:
            if node[c.pre] == node[c.post]:
                return True
            ts.add(node[c.post], node[c.pre])
    try:
        ts.prepare()
    except graphlib.CycleError:
        return True
    return False


# -- loading -----------------------------------------------------------------


def load_task(path: str | Path) -> TaskSpec:
    """Load a task file, or a built-in task by name."""
    p = Path(path)
    if not p.exists() and str(path) in BUILTIN_NAMES:
        return builtin_task(str(path))
    try:
        text = p.read_text()
    except OSError as e:
        raise TaskError(f"{path}: {e.strerror}") from None
    return loads_task(text, str(path))


def loads_task(text: str, source: str = "<task>") -> TaskSpec:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        loc = f" (line {mark.line + 1}, column {mark.column + 1})" if mark is not None else ""
        raise TaskError(f"{source}{loc}: parse error: {getattr(e, 'problem', e)}") from None
    try:
        return parse_task(doc, source)
    except TaskError as e:
        msg = str(e)
        raise TaskError(msg if msg.startswith(source) else f"{source}: {msg}") from None


def builtin_path(name: str) -> Path:
    return Path(str(resources.files("dexgen.tasks") / "data" / f"{name}.yaml"))


def builtin_task(name: str) -> TaskSpec:
    if name not in BUILTIN_NAMES:
        raise TaskError(f"unknown built-in task '{name}'; expected one of {BUILTIN_NAMES}")
    return loads_task(builtin_path(name).read_text(), name)


def builtin_suite() -> list[TaskSpec]:
    return [builtin_task(n) for n in BUILTIN_NAMES]


def resolve_task(name_or_path: str) -> TaskSpec:
    """A built-in name, or a path to a task file."""
    if name_or_path in BUILTIN_NAMES:
        return builtin_task(name_or_path)
    return load_task(name_or_path)
