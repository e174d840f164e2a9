"""Deterministic quasi-static kinematic world for two pose-controlled arms.

End-effectors move toward commanded poses under a per-step clamp. Grasping is
an attachment made when the hand closes near a grasp point; released free
objects drop straight down onto the table or into the container below them.
Contents of a container follow it, and spill out once it is tipped past
``spill_angle``. There is no collision handling: bodies interpenetrate freely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from dexgen.geometry import (
    IDENTITY,
    Pose,
    _make,
    axis_angle,
    compose,
    invert,
    pose_error,
    quat_conj,
    quat_mul,
    rotate,
    transform_point,
)
from dexgen.tasks import ARMS, DEXTEROUS_JOINTS, ObjectSpec, Predicate, TaskError, TaskSpec


@dataclass(frozen=True, slots=True)
class HandAction:
    kind: str  # "gripper" | "dexterous"
    values: tuple[float, ...]

    def to_list(self) -> list[float]:
        return list(self.values)


@dataclass(frozen=True, slots=True)
class ArmAction:
    target: Pose
    hand: HandAction


@dataclass(frozen=True, slots=True)
class ObjectState:
    id: str
    pose: Pose
    joint: float | None = None
    joint_limits: tuple[float, float] | None = None


@dataclass(frozen=True, slots=True)
class Attachment:
    object: str
    offset: Pose  # object (link) pose expressed in the end-effector frame
    since: int


@dataclass(frozen=True, slots=True)
class Support:
    container: str
    offset: Pose  # object pose expressed in the container's link frame


@dataclass(frozen=True)
class WorldState:
    time: int
    eef: Mapping[str, Pose]
    hand: Mapping[str, HandAction]
    objects: Mapping[str, ObjectState]
    attachments: Mapping[str, Attachment | None]
    supports: Mapping[str, Support] = field(default_factory=dict)
    frame: Pose = IDENTITY  # table frame; gravity acts along its -z


@dataclass(frozen=True)
class WorldConfig:
    max_delta_pos: float = 0.02
    max_delta_rot: float = 0.1
    grasp_radius: float = 0.03
    grasp_threshold: float = 0.5
    carry_slip_pos: float = 0.01
    carry_slip_rot: float = 0.1
    spill_angle: float = math.pi / 2
    table_height: float = 0.0
    obs_noise: float = 0.0


def _move_toward(cur: Pose, target: Pose, max_pos: float, max_rot: float) -> Pose:
    cp, tp = cur.pos, target.pos
    d = (tp[0] - cp[0], tp[1] - cp[1], tp[2] - cp[2])
    dist = math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
    rel = quat_mul(quat_conj(cur.quat), target.quat)
    if rel[0] < 0.0:
        rel = (-rel[0], -rel[1], -rel[2], -rel[3])
    v = math.sqrt(rel[1] * rel[1] + rel[2] * rel[2] + rel[3] * rel[3])
    angle = 2.0 * math.atan2(v, rel[0])
    if dist <= max_pos and angle <= max_rot:
        return target
    if dist > max_pos:
        k = max_pos / dist
        pos = (cp[0] + k * d[0], cp[1] + k * d[1], cp[2] + k * d[2])
    else:
        pos = tp
    if angle > max_rot:
        quat = quat_mul(cur.quat, axis_angle((rel[1], rel[2], rel[3]), max_rot))
    else:
        quat = target.quat
    return _make(pos, quat)


def _z_axis(q) -> tuple[float, float, float]:
    return rotate(q, (0.0, 0.0, 1.0))


class World:
    """Static model of a task's scene plus the stepping rules."""

    def __init__(self, task: TaskSpec, config: WorldConfig | None = None):
        self.task = task
        self.config = config or WorldConfig()
        self.specs: dict[str, ObjectSpec] = dict(task.objects)
        self.containers = [o.id for o in task.objects.values() if o.container is not None]
        self.graspable = [o.id for o in task.objects.values() if o.graspable]
        self._axis = {}
        for o in task.objects.values():
            if o.articulation is not None:
                a = o.articulation.axis
                n = math.sqrt(sum(c * c for c in a))
                self._axis[o.id] = (a[0] / n, a[1] / n, a[2] / n)

    # -- hands ----------------------------------------------------------

    def open_hand(self) -> HandAction:
        if self.task.embodiment == "gripper":
            return HandAction("gripper", (0.0,))
        return HandAction("dexterous", (self.task.hand_limits[0],) * DEXTEROUS_JOINTS)

    def closed_hand(self) -> HandAction:
        if self.task.embodiment == "gripper":
            return HandAction("gripper", (1.0,))
        lo, hi = self.task.hand_limits
        return HandAction("dexterous", (lo + 0.75 * (hi - lo),) * DEXTEROUS_JOINTS)

    def closure(self, hand: HandAction) -> float:
        """Gripper closure, or mean normalized flexion of a dexterous hand."""
        if hand.kind == "gripper":
            return hand.values[0]
        lo, hi = self.task.hand_limits
        return sum((v - lo) / (hi - lo) for v in hand.values) / len(hand.values)

    def clip_hand(self, hand: HandAction) -> HandAction:
        if hand.kind == "gripper":
            lo, hi = 0.0, 1.0
        else:
            lo, hi = self.task.hand_limits
        vals = hand.values
        if all(lo <= v <= hi for v in vals):
            return hand
        return HandAction(hand.kind, tuple(min(max(v, lo), hi) for v in vals))

    # -- geometry helpers -------------------------------------------------

    def link_pose(self, state: WorldState, oid: str) -> Pose:
        """Pose of the moving part of an object (the object itself unless articulated)."""
        o = state.objects[oid]
        if o.joint is None:
            return o.pose
        ax = self._axis[oid]
        return compose(o.pose, Pose((ax[0] * o.joint, ax[1] * o.joint, ax[2] * o.joint)))

    def _link(self, objects: Mapping[str, ObjectState], oid: str) -> Pose:
        o = objects[oid]
        if o.joint is None:
            return o.pose
        ax = self._axis[oid]
        return compose(o.pose, Pose((ax[0] * o.joint, ax[1] * o.joint, ax[2] * o.joint)))

    def tilt(self, frame: Pose, q) -> float:
        """Angle between a body's z-axis and the table normal."""
        a = _z_axis(q)
        b = _z_axis(frame.quat)
        c = a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
        return math.acos(max(-1.0, min(1.0, c)))

    # -- reset ------------------------------------------------------------

    def reset(self, variant: str, seed: int) -> WorldState:
        task = self.task
        if variant not in task.reset_distributions:
            raise TaskError(f"unknown reset variant '{variant}' for task '{task.name}'")
        ranges = task.reset_distributions[variant]
        rng = np.random.default_rng(seed)
        frame = IDENTITY
        table = self.config.table_height
        objects: dict[str, ObjectState] = {}
        for oid, spec in task.objects.items():
            u = rng.uniform(-1.0, 1.0, 3)
            if oid not in ranges:
                continue
            r = ranges[oid]
            x = r.center[0] + r.half_range[0] * float(u[0])
            y = r.center[1] + r.half_range[1] * float(u[1])
            yaw = r.center[2] + r.half_range[2] * float(u[2])
            pose = Pose((x, y, table + spec.size[2] / 2.0), axis_angle((0.0, 0.0, 1.0), yaw))
            art = spec.articulation
            objects[oid] = ObjectState(
                oid,
                compose(frame, pose),
                None if art is None else art.initial,
                None if art is None else art.limits,
            )
        supports: dict[str, Support] = {}
        for oid, spec in task.objects.items():
            if spec.inside is None:
                continue
            cont = self.specs[spec.inside].container
            offset = Pose((0.0, 0.0, cont.floor + spec.size[2] / 2.0))
            objects[oid] = ObjectState(oid, compose(self._link(objects, spec.inside), offset))
            supports[oid] = Support(spec.inside, offset)
        objects = {oid: objects[oid] for oid in task.objects}
        return WorldState(
            time=0,
            eef={arm: compose(frame, task.homes[arm]) for arm in ARMS},
            hand={arm: self.open_hand() for arm in ARMS},
            objects=objects,
            attachments={arm: None for arm in ARMS},
            supports=supports,
            frame=frame,
        )

    # -- stepping -----------------------------------------------------------

    def step(
        self,
        state: WorldState,
        actions: Mapping[str, ArmAction],
        max_delta: tuple[float, float] | None = None,
    ) -> WorldState:
        cfg = self.config
        max_pos, max_rot = max_delta if max_delta is not None else (cfg.max_delta_pos, cfg.max_delta_rot)
        objects = dict(state.objects)
        attachments = dict(state.attachments)
        supports = dict(state.supports)
        eef: dict[str, Pose] = {}
        hand: dict[str, HandAction] = {}

        for arm in ARMS:
            act = actions[arm]
            new = _move_toward(state.eef[arm], act.target, max_pos, max_rot)
            att = attachments[arm]
            if att is not None and att.object in self._axis:
                new, joint = self._constrain(objects[att.object], att.offset, new)
                objects[att.object] = replace(objects[att.object], joint=joint)
            eef[arm] = new
            hand[arm] = self.clip_hand(act.hand)

        self._follow(eef, objects, attachments)

        thr = cfg.grasp_threshold
        released: list[str] = []
        for arm in ARMS:
            was = self.closure(state.hand[arm]) > thr
            now = self.closure(hand[arm]) > thr
            att = attachments[arm]
            if now and not was and att is None:
                oid = self._grasp_candidate(eef[arm], objects)
                if oid is not None:
                    attachments[arm] = Attachment(oid, compose(invert(eef[arm]), self._link(objects, oid)), state.time)
                    supports.pop(oid, None)
            elif was and not now and att is not None:
                attachments[arm] = None
                released.append(att.object)

        held = {a.object for a in attachments.values() if a is not None}
        for oid in released:
            if oid not in held and oid not in self._axis:
                self._settle(oid, objects, supports, attachments, state.frame, exclude=())

        self._carry_contents(objects, supports)

        for cid in self.containers:
            contents = [oid for oid, s in supports.items() if s.container == cid]
            if not contents:
                continue
            if self.tilt(state.frame, self._link(objects, cid).quat) > cfg.spill_angle:
                for oid in contents:
                    del supports[oid]
                    self._settle(oid, objects, supports, attachments, state.frame, exclude=(cid,))
                self._carry_contents(objects, supports)

        return WorldState(
            time=state.time + 1,
            eef=eef,
            hand=hand,
            objects=objects,
            attachments=attachments,
            supports=supports,
            frame=state.frame,
        )

    def _follow(self, eef, objects, attachments) -> None:
        """Move held free objects with the earliest-attached arm; re-seat or slip the other."""
        cfg = self.config
        held: dict[str, list[str]] = {}
        for arm in ARMS:
            att = attachments[arm]
            if att is not None:
                held.setdefault(att.object, []).append(arm)
        for oid, arms in held.items():
            if oid in self._axis:
                continue
            arms.sort(key=lambda a: (attachments[a].since, ARMS.index(a)))
            primary = arms[0]
            pose = compose(eef[primary], attachments[primary].offset)
            if pose != objects[oid].pose:
                objects[oid] = replace(objects[oid], pose=pose)
            for arm in arms[1:]:
                att = attachments[arm]
                dp, dr = pose_error(compose(eef[arm], att.offset), pose)
                if dp <= cfg.carry_slip_pos and dr <= cfg.carry_slip_rot:
                    attachments[arm] = Attachment(oid, compose(invert(eef[arm]), pose), att.since)
                else:
                    attachments[arm] = None

    def _constrain(self, obj: ObjectState, offset: Pose, eef: Pose) -> tuple[Pose, float]:
        ax = self._axis[obj.id]
        lo, hi = obj.joint_limits
        desired = compose(eef, offset)
        d = transform_point(invert(obj.pose), desired.pos)
        joint = min(max(d[0] * ax[0] + d[1] * ax[1] + d[2] * ax[2], lo), hi)
        link = compose(obj.pose, Pose((ax[0] * joint, ax[1] * joint, ax[2] * joint)))
        return compose(link, invert(offset)), joint

    def _grasp_candidate(self, eef: Pose, objects: Mapping[str, ObjectState]) -> str | None:
        best, best_d = None, self.config.grasp_radius
        for oid in self.graspable:
            link = self._link(objects, oid)
            for g in self.specs[oid].grasps:
                d = math.dist(transform_point(link, g), eef.pos)
                if d <= best_d:
                    best, best_d = oid, d
        return best

    def _contains(self, supports: Mapping[str, Support], outer: str, inner: str) -> bool:
        """True when ``inner`` rests (transitively) inside ``outer``."""
        cur = inner
        while cur in supports:
            cur = supports[cur].container
            if cur == outer:
                return True
        return False

    def _settle(self, oid, objects, supports, attachments, frame: Pose, exclude) -> None:
        """Drop a free object straight down onto the table or a container floor."""
        spec = self.specs[oid]
        pose = objects[oid].pose
        half = spec.size[2] / 2.0
        held = {a.object for a in attachments.values() if a is not None}
        inv_frame = invert(frame)
        best = None
        for cid in self.containers:
            if cid == oid or cid in exclude or cid in held or self._contains(supports, oid, cid):
                continue
            link = self._link(objects, cid)
            if self.tilt(frame, link.quat) > math.pi / 4:
                continue
            cont = self.specs[cid].container
            local = transform_point(invert(link), pose.pos)
            if abs(local[0]) <= cont.half_extents[0] and abs(local[1]) <= cont.half_extents[1]:
                floor_z = transform_point(inv_frame, transform_point(link, (0.0, 0.0, cont.floor)))[2]
                if best is None or floor_z > best[0]:
                    best = (floor_z, cid, link, local)
        if best is not None:
            _, cid, link, local = best
            cont = self.specs[cid].container
            new = Pose(transform_point(link, (local[0], local[1], cont.floor + half)), pose.quat)
            objects[oid] = replace(objects[oid], pose=new)
            supports[oid] = Support(cid, compose(invert(link), new))
        else:
            local = transform_point(inv_frame, pose.pos)
            new = Pose(transform_point(frame, (local[0], local[1], self.config.table_height + half)), pose.quat)
            objects[oid] = replace(objects[oid], pose=new)
            supports.pop(oid, None)

    def _carry_contents(self, objects, supports) -> None:
        done: set[str] = set()

        def place(oid: str) -> None:
            if oid in done:
                return
            done.add(oid)
            s = supports.get(oid)
            if s is None:
                return
            place(s.container)
            new = compose(self._link(objects, s.container), s.offset)
            if new != objects[oid].pose:
                objects[oid] = replace(objects[oid], pose=new)

        for oid in list(supports):
            place(oid)

    # -- observation and success ---------------------------------------------

    def observe_object_pose(self, state: WorldState, oid: str, rng: np.random.Generator | None = None) -> Pose:
        if oid not in state.objects:
            raise KeyError(f"unknown object '{oid}'")
        pose = state.objects[oid].pose
        sigma = self.config.obs_noise
        if sigma > 0.0:
            if rng is None:
                raise ValueError("observation noise is enabled but no random generator was given")
            n = rng.normal(0.0, sigma, 3)
            pose = Pose((pose.pos[0] + n[0], pose.pos[1] + n[1], pose.pos[2] + n[2]), pose.quat)
        return pose

    def evaluate(self, pred: Predicate, state: WorldState) -> bool:
        op, a = pred.op, pred.args
        if op == "all":
            return all(self.evaluate(c, state) for c in pred.children)
        if op == "any":
            return any(self.evaluate(c, state) for c in pred.children)
        if op == "contained_in":
            s = state.supports.get(a["object"])
            return s is not None and s.container == a["container"]
        if op == "joint_above":
            j = state.objects[a["object"]].joint
            return j is not None and j >= a["value"]
        pos = self.link_pose(state, a["object"]).pos
        if op == "height_above":
            return transform_point(invert(state.frame), pos)[2] >= a["height"]
        if op == "distance_below":
            return math.dist(pos, self.link_pose(state, a["reference"]).pos) <= a["distance"]
        if op == "within_box":
            ref = state.frame if a["reference"] is None else self.link_pose(state, a["reference"])
            local = transform_point(invert(ref), pos)
            tol = a["tolerance"]
            return all(abs(local[i] - a["center"][i]) <= a["half_extents"][i] + tol for i in range(3))
        raise ValueError(f"unknown predicate '{op}'")

    def check_success(self, state: WorldState) -> bool:
        return self.evaluate(self.task.success, state)


def transform_state(state: WorldState, g: Pose) -> WorldState:
    """Rigidly move the whole scene, including the table frame, by ``g``."""
    return replace(
        state,
        eef={arm: compose(g, p) for arm, p in state.eef.items()},
        objects={oid: replace(o, pose=compose(g, o.pose)) for oid, o in state.objects.items()},
        frame=compose(g, state.frame),
    )


def hold_action(state: WorldState, arm: str) -> ArmAction:
    """Keep an arm where it is with its current hand command."""
    return ArmAction(state.eef[arm], state.hand[arm])


def reset(task: TaskSpec, variant: str, seed: int) -> WorldState:
    return World(task).reset(variant, seed)


def step(task: TaskSpec, state: WorldState, actions: Mapping[str, ArmAction], max_delta=None) -> WorldState:
    return World(task).step(state, actions, max_delta)


def observe_object_pose(task: TaskSpec, state: WorldState, oid: str) -> Pose:
    return World(task).observe_object_pose(state, oid)


def check_success(state: WorldState, task: TaskSpec) -> bool:
    return World(task).check_success(state)
