"""Scripted waypoint experts for the built-in tasks.

Each arm runs a small generator program (approach, grasp, move, release) that
yields once per world step after setting its command. Barriers and
state-conditioned waits let the two programs coordinate. Targets are computed
from the live state when a move starts, so the same program works for any
reset.
"""

from __future__ import annotations

import math
from typing import Callable, Iterator

from dexgen.geometry import Pose, axis_angle, compose, interpolate, invert, quat_distance, quat_mul, rotate
from dexgen.tasks import ARMS, TaskSpec
from dexgen.world import ArmAction, HandAction, World, WorldState

# Per-step speeds kept below the controller clamp so the arm tracks every waypoint exactly.
SPEED_POS = 0.018
SPEED_ROT = 0.09

DOWN = (0.0, 1.0, 0.0, 0.0)  # tool z-axis pointing at the table


class ExpertError(RuntimeError):
    """The scripted expert did not reach a successful final state."""


class _Context:
    def __init__(self, world: World, state: WorldState):
        self.world = world
        self.state = state
        self.t = 0
        self.cmd = {arm: ArmAction(state.eef[arm], state.hand[arm]) for arm in ARMS}
        self.arrived: dict[str, dict[str, int]] = {}

    def obj(self, oid: str) -> Pose:
        return self.state.objects[oid].pose

    def link(self, oid: str) -> Pose:
        return self.world.link_pose(self.state, oid)

    # -- primitives (generators yielding once per step) ----------------------

    def move(self, arm: str, target: Pose, hand: HandAction | None = None) -> Iterator[None]:
        start = self.cmd[arm].target
        hand = hand or self.cmd[arm].hand
        dist = math.dist(start.pos, target.pos)
        ang = quat_distance(start.quat, target.quat)
        n = max(1, math.ceil(max(dist / SPEED_POS, ang / SPEED_ROT) - 1e-9))
        for p in interpolate(start, target, n):
            self.cmd[arm] = ArmAction(p, hand)
            yield

    def move_by(self, arm: str, dx: float, dy: float, dz: float) -> Iterator[None]:
        p = self.cmd[arm].target
        yield from self.move(arm, Pose((p.pos[0] + dx, p.pos[1] + dy, p.pos[2] + dz), p.quat))

    def set_hand(self, arm: str, hand: HandAction) -> Iterator[None]:
        self.cmd[arm] = ArmAction(self.cmd[arm].target, hand)
        yield

    def wait(self, n: int) -> Iterator[None]:
        for _ in range(n):
            yield

    def wait_until(self, pred: Callable[[WorldState], bool]) -> Iterator[None]:
        while not pred(self.state):
            yield

    def barrier(self, arm: str, name: str) -> Iterator[None]:
        """Both arms leave the barrier on the same step."""
        marks = self.arrived.setdefault(name, {})
        marks.setdefault(arm, self.t)
        while not (len(marks) == len(ARMS) and all(v < self.t for v in marks.values())):
            yield
            marks = self.arrived[name]

    # -- composite moves -----------------------------------------------------

    def pick(self, arm: str, oid: str, grasp_index: int = 0, approach: float = 0.1) -> Iterator[None]:
        g = self.world.specs[oid].grasps[grasp_index]
        grasp = compose(self.link(oid), Pose(g, DOWN))
        pre = Pose((grasp.pos[0], grasp.pos[1], grasp.pos[2] + approach), grasp.quat)
        yield from self.move(arm, pre)
        yield from self.move(arm, grasp)
        yield from self.set_hand(arm, self.world.closed_hand())
        yield from self.wait(1)

    def carry_to(self, arm: str, object_target: Pose) -> Iterator[None]:
        """Move so that the held object reaches ``object_target``."""
        att = self.state.attachments[arm]
        yield from self.move(arm, compose(object_target, invert(att.offset)))

    def release(self, arm: str) -> Iterator[None]:
        yield from self.set_hand(arm, self.world.open_hand())
        yield from self.wait(1)


def _above(p: Pose, dz: float, quat=None) -> Pose:
    return Pose((p.pos[0], p.pos[1], p.pos[2] + dz), quat if quat is not None else p.quat)


# -- task programs -------------------------------------------------------------


def _two_bin_sort(ctx: _Context, arm: str) -> Iterator[None]:
    cube, bin_ = ("cube_a", "bin_left") if arm == "left" else ("cube_b", "bin_right")
    yield from ctx.pick(arm, cube)
    yield from ctx.move_by(arm, 0.0, 0.0, 0.12)
    floor = ctx.world.specs[bin_].container.floor
    b = ctx.obj(bin_)
    cube_now = ctx.obj(cube)
    yield from ctx.carry_to(arm, Pose(compose(b, Pose((0.0, 0.0, 0.14))).pos, cube_now.quat))
    yield from ctx.carry_to(arm, Pose(compose(b, Pose((0.0, 0.0, floor + 0.06))).pos, cube_now.quat))
    yield from ctx.release(arm)
    yield from ctx.move_by(arm, 0.0, 0.0, 0.1)


def _tray_lift(ctx: _Context, arm: str) -> Iterator[None]:
    yield from ctx.pick(arm, "tray", 0 if arm == "left" else 1)
    yield from ctx.barrier(arm, "lift")
    yield from ctx.move_by(arm, 0.0, 0.0, 0.15)
    yield from ctx.wait(2)


HANDOVER_POINT = (0.1, 0.0, 0.22)


def _handover_sort(ctx: _Context, arm: str) -> Iterator[None]:
    if arm == "left":
        yield from ctx.pick(arm, "can")
        yield from ctx.move_by(arm, 0.0, 0.0, 0.12)
        yield from ctx.move(arm, Pose(HANDOVER_POINT, DOWN))
        yield from ctx.barrier(arm, "handover")
        yield from ctx.wait_until(lambda s: s.attachments["right"] is not None)
        yield from ctx.release(arm)
        yield from ctx.move_by(arm, 0.0, 0.05, 0.1)
        yield from ctx.move(arm, Pose((-0.15, 0.3, 0.32), DOWN))
    else:
        hx, hy, hz = HANDOVER_POINT
        yield from ctx.move(arm, Pose((hx, hy - 0.1, hz), DOWN))
        yield from ctx.barrier(arm, "handover")
        yield from ctx.move(arm, Pose((hx, hy - 0.015, hz), DOWN))
        yield from ctx.set_hand(arm, ctx.world.closed_hand())
        yield from ctx.wait_until(lambda s: s.attachments["left"] is None)
        yield from ctx.move_by(arm, 0.0, 0.0, 0.05)
        b = ctx.obj("bin")
        can = ctx.obj("can")
        yield from ctx.carry_to(arm, Pose(compose(b, Pose((0.0, 0.0, 0.16))).pos, can.quat))
        yield from ctx.carry_to(arm, Pose(compose(b, Pose((0.0, 0.0, 0.1))).pos, can.quat))
        yield from ctx.release(arm)
        yield from ctx.move_by(arm, 0.0, 0.0, 0.1)


POUR_ANGLE = math.radians(104.0)
POUR_HEIGHT = 0.24


def _pour_pose(ctx: _Context, arm: str) -> tuple[Pose, Pose]:
    """Upright and tipped poses that drop the ball onto the bowl's center."""
    held = ctx.cmd[arm].target
    q_up = held.quat
    q_tip = quat_mul(q_up, axis_angle((1.0, 0.0, 0.0), POUR_ANGLE))
    ball_in_eef = compose(invert(ctx.state.eef[arm]), ctx.obj("ball")).pos
    cup_in_eef = ctx.state.attachments[arm].offset
    frame = ctx.state.frame
    # the ball leaves the cup on the first interpolated step tipped past the spill angle
    probe = interpolate(Pose((0, 0, 0), q_up), Pose((0, 0, 0), q_tip), _steps(0.0, POUR_ANGLE))
    q_spill = next(p.quat for p in probe if ctx.world.tilt(frame, compose(p, cup_in_eef).quat) > ctx.world.config.spill_angle)
    off = rotate(q_spill, ball_in_eef)
    bowl = ctx.obj("bowl")
    pos = (bowl.pos[0] - off[0], bowl.pos[1] - off[1], POUR_HEIGHT)
    return Pose(pos, q_up), Pose(pos, q_tip)


def _steps(dist: float, ang: float) -> int:
    return max(1, math.ceil(max(dist / SPEED_POS, ang / SPEED_ROT) - 1e-9))


def _pour_then_place(ctx: _Context, arm: str) -> Iterator[None]:
    if arm == "left":
        yield from ctx.pick(arm, "cup")
        yield from ctx.move_by(arm, 0.0, 0.0, 0.15)
        upright, tipped = _pour_pose(ctx, arm)
        yield from ctx.move(arm, upright)
        yield from ctx.move(arm, tipped)
        yield from ctx.wait(3)
        yield from ctx.move(arm, upright)
        yield from ctx.move(arm, Pose((-0.15, 0.3, 0.3), upright.quat))
    else:
        yield from ctx.wait_until(lambda s: s.supports.get("ball") is not None and s.supports["ball"].container == "bowl")
        yield from ctx.wait(3)
        yield from ctx.pick(arm, "bowl")
        yield from ctx.move_by(arm, 0.0, 0.0, 0.12)
        pad = ctx.obj("pad")
        bowl = ctx.obj("bowl")
        yield from ctx.carry_to(arm, Pose((pad.pos[0], pad.pos[1], bowl.pos[2]), bowl.quat))
        half = ctx.world.specs["bowl"].size[2] / 2.0
        yield from ctx.carry_to(arm, Pose((pad.pos[0], pad.pos[1], half + 0.02), bowl.quat))
        yield from ctx.release(arm)
        yield from ctx.move_by(arm, 0.0, 0.0, 0.12)


def _drawer_cleanup(ctx: _Context, arm: str) -> Iterator[None]:
    spec = ctx.world.specs["drawer"]
    if arm == "left":
        link = ctx.link("drawer")
        handle = compose(link, Pose(spec.grasps[0], DOWN))
        out = rotate(ctx.obj("drawer").quat, spec.articulation.axis)
        yield from ctx.move(arm, Pose((handle.pos[0] + 0.08 * out[0], handle.pos[1] + 0.08 * out[1], handle.pos[2] + 0.06), handle.quat))
        yield from ctx.move(arm, handle)
        yield from ctx.set_hand(arm, ctx.world.closed_hand())
        yield from ctx.wait(1)
        yield from ctx.move(arm, Pose((handle.pos[0] + 0.2 * out[0], handle.pos[1] + 0.2 * out[1], handle.pos[2]), handle.quat))
        yield from ctx.release(arm)
        yield from ctx.move_by(arm, 0.0, 0.0, 0.15)
        yield from ctx.move(arm, Pose((-0.15, 0.3, 0.3), handle.quat))
    else:
        yield from ctx.pick(arm, "toy")
        yield from ctx.move_by(arm, 0.0, 0.0, 0.15)
        yield from ctx.wait_until(lambda s: s.objects["drawer"].joint >= 0.18 and s.attachments["left"] is None)
        yield from ctx.wait(2)
        link = ctx.link("drawer")
        toy = ctx.obj("toy")
        yield from ctx.carry_to(arm, Pose(compose(link, Pose((0.0, 0.0, 0.14))).pos, toy.quat))
        yield from ctx.carry_to(arm, Pose(compose(link, Pose((0.0, 0.0, spec.container.floor + 0.06))).pos, toy.quat))
        yield from ctx.release(arm)
        yield from ctx.move_by(arm, 0.0, 0.0, 0.12)


PROGRAMS = {
    "two-bin-sort": _two_bin_sort,
    "tray-lift": _tray_lift,
    "handover-sort": _handover_sort,
    "pour-then-place": _pour_then_place,
    "drawer-cleanup": _drawer_cleanup,
}


def run_expert(task: TaskSpec, state: WorldState, world: World | None = None, max_steps: int | None = None):
    """Roll out the task's expert program from ``state``.

    Returns ``(states, actions)`` with ``len(states) == len(actions[arm]) + 1``.
    """
    if task.name not in PROGRAMS:
        raise ExpertError(f"no scripted expert for task '{task.name}'")
    world = world or World(task)
    ctx = _Context(world, state)
    program = PROGRAMS[task.name]
    gens: dict[str, Iterator[None] | None] = {arm: program(ctx, arm) for arm in ARMS}
    states = [state]
    actions: dict[str, list[ArmAction]] = {arm: [] for arm in ARMS}
    limit = max_steps or task.max_episode_steps
    for t in range(limit):
        ctx.t = t
        ctx.state = state
        alive = False
        for arm in ARMS:
            g = gens[arm]
            if g is None:
                continue
            try:
                next(g)
                alive = True
            except StopIteration:
                gens[arm] = None
        if not alive:
            break
        for arm in ARMS:
            actions[arm].append(ctx.cmd[arm])
        state = world.step(state, dict(ctx.cmd))
        states.append(state)
    else:
        raise ExpertError(f"{task.name}: expert did not finish within {limit} steps")
    return states, actions
