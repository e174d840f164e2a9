"""Trajectory generation from segmented source demos.

Each arm owns an action queue. Whenever a queue runs dry the arm's next
subtask is planned: the source segment is mapped into the current scene by
the reference object's relative transform (or copied verbatim under the
replay scheme) and prefixed with an interpolation from the current
end-effector pose. Coordination subtasks share one transform and are
synchronized so both bodies finish on the same step; sequential constraints
hold a post-subtask until its pre-subtask has completed.
"""

from __future__ import annotations

import hashlib
import math
from collections import Counter, deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from dexgen.demo import SegmentedDemo, SourceDemo
from dexgen.geometry import IDENTITY, Pose, apply, compose, from_rotvec, interpolate, relative_transform
from dexgen.tasks import ARMS, SCHEMES, SubtaskSpec, TaskSpec
from dexgen.world import ArmAction, HandAction, World, WorldConfig, WorldState

PHASES = ("interpolating", "executing", "waiting-sync", "waiting-order", "done")
SELECTIONS = ("same", "independent")
HOLD_PHASES = frozenset({"waiting-sync", "waiting-order", "done"})


class ConfigError(ValueError):
    """Invalid or unsafe generation settings."""


class DeadlockError(RuntimeError):
    """Both arms stayed blocked for longer than the configured patience."""


@dataclass(frozen=True)
class GenConfig:
    n_interpolation_steps: int = 25
    source_selection: str = "same"
    enforce_ordering: bool = True
    max_episode_steps: int | None = None
    variant: str = "D0"
    # group id or "arm:index" -> scheme
    scheme_overrides: Mapping[str, str] = field(default_factory=dict)
    seed: int = 0
    # baseline action noise std: (meters, radians, hand units)
    noise: tuple[float, float, float] | None = None
    allow_unsafe: bool = False
    keep_failures: bool = False
    deadlock_patience: int | None = None
    max_attempts_factor: int = 50
    world: WorldConfig = field(default_factory=WorldConfig)

    def __post_init__(self) -> None:
        if self.n_interpolation_steps < 1:
            raise ConfigError(f"n_interpolation_steps must be >= 1, got {self.n_interpolation_steps}")
        if self.source_selection not in SELECTIONS:
            raise ConfigError(f"source_selection must be one of {SELECTIONS}, got '{self.source_selection}'")
        for key, scheme in self.scheme_overrides.items():
            if scheme not in SCHEMES:
                raise ConfigError(f"scheme override '{key}': unknown scheme '{scheme}'")
        if self.noise is not None and (len(self.noise) != 3 or any(s < 0 for s in self.noise)):
            raise ConfigError("noise must be three non-negative standard deviations (pos, rot, hand)")
        if self.max_attempts_factor < 1:
            raise ConfigError("max_attempts_factor must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scheme_overrides"] = dict(sorted(self.scheme_overrides.items()))
        d["noise"] = None if self.noise is None else list(self.noise)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        d = dict(d)
        d["world"] = WorldConfig(**d.get("world", {}))
        if d.get("noise") is not None:
            d["noise"] = tuple(d["noise"])
        return cls(**d)


def check_config(task: TaskSpec, config: GenConfig) -> None:
    """Reject settings that cannot run on ``task``."""
    if config.variant not in task.reset_distributions:
        raise ConfigError(f"unknown reset variant '{config.variant}' for task '{task.name}'")
    groups = task.coordination_groups()
    for key in config.scheme_overrides:
        if key in groups:
            continue
        arm, _, idx = key.partition(":")
        if arm not in ARMS or not idx.isdigit() or int(idx) >= len(task.subtasks[arm]):
            raise ConfigError(f"scheme override '{key}' names no coordination group or subtask of '{task.name}'")
    if (
        config.source_selection == "independent"
        and not config.enforce_ordering
        and task.sequential_constraints
        and not config.allow_unsafe
    ):
        raise ConfigError(
            f"task '{task.name}' has sequential constraints: independent source selection "
            "requires enforce_ordering (pass allow_unsafe to force)"
        )


def derive_seed(seed: int, index: int) -> int:
    """64-bit per-episode seed; independent of the number of workers."""
    h = hashlib.blake2b(f"{seed}:{index}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "big")


def scheme_for(task: TaskSpec, st: SubtaskSpec, config: GenConfig) -> str:
    over = config.scheme_overrides
    key = f"{st.arm}:{st.index}"
    if key in over:
        return over[key]
    if st.coordination is not None:
        return over.get(st.coordination.group, st.coordination.scheme)
    return "transform"


# -- queues and plans ------------------------------------------------------------


@dataclass
class SubtaskPlan:
    prefix: list[ArmAction]
    body: list[ArmAction]
    transform: Pose

    @property
    def actions(self) -> list[ArmAction]:
        return self.prefix + self.body


@dataclass
class ActionQueue:
    arm: str
    n_subtasks: int
    pending: deque = field(default_factory=deque)  # (ArmAction, is_body)
    subtask: int = 0
    remaining_in_segment: int = 0
    last_action: ArmAction | None = None
    phase: str = "interpolating"

    @property
    def done(self) -> bool:
        return self.subtask >= self.n_subtasks and not self.pending

    @property
    def in_body(self) -> bool:
        return bool(self.pending) and self.pending[0][1]

    def load(self, plan: SubtaskPlan) -> None:
        if self.pending:
            raise RuntimeError(f"{self.arm}: loading a plan into a non-empty queue")
        self.pending.extend((a, False) for a in plan.prefix)
        self.pending.extend((a, True) for a in plan.body)
        self.remaining_in_segment = len(plan.body)

    def pop(self) -> tuple[ArmAction, bool]:
        action, body = self.pending.popleft()
        if body:
            self.remaining_in_segment -= 1
        self.last_action = action
        return action, body

    def hold(self, state: WorldState) -> ArmAction:
        if self.last_action is None:
            self.last_action = ArmAction(state.eef[self.arm], state.hand[self.arm])
        return self.last_action


def build_subtask_plan(
    queue: ActionQueue,
    segmented: SegmentedDemo,
    state: WorldState,
    scheme: str,
    shared_transform: Pose | None = None,
    *,
    world: World,
    n_interpolation_steps: int = 25,
    rng: np.random.Generator | None = None,
) -> SubtaskPlan:
    """Plan the queue's next subtask from a source segment.

    The transform maps the source reference-object pose onto the observed
    one; ``shared_transform`` overrides it for the second arm of a
    coordination group. Hand actions are copied verbatim.
    """
    seg = segmented.segments[queue.arm][queue.subtask]
    src = segmented.actions(seg)
    if scheme == "replay":
        t = IDENTITY
        body = list(src)
    else:
        if shared_transform is not None:
            t = shared_transform
        else:
            if seg.reference not in state.objects:
                raise KeyError(f"reference object '{seg.reference}' missing from the scene")
            t = relative_transform(seg.ref_pose, world.observe_object_pose(state, seg.reference, rng))
        body = [ArmAction(apply(t, a.target), a.hand) for a in src]
    hand = body[0].hand
    prefix = [ArmAction(p, hand) for p in interpolate(state.eef[queue.arm], body[0].target, n_interpolation_steps)]
    return SubtaskPlan(prefix, body, t)


# -- episodes ----------------------------------------------------------------------


@dataclass(eq=False)
class GeneratedEpisode:
    id: str
    task: str
    states: list[WorldState]
    actions: dict[str, list[ArmAction]]
    success: bool
    phases: list[dict[str, str]]
    segments: list[dict[str, int | None]]  # subtask index behind each action
    provenance: dict = field(default_factory=dict)

    @property
    def length(self) -> int:
        return len(self.actions[ARMS[0]])

    @property
    def failure(self) -> str | None:
        return self.provenance.get("failure")


def _coordination_pose(task: TaskSpec, sd: SegmentedDemo, group: str) -> tuple[str, Pose]:
    ref = task.coordination_groups()[group]["left"].reference
    return ref, sd.group_refs[group][1]


def generate_episode(
    task: TaskSpec,
    segmented_demos: Sequence[SegmentedDemo],
    config: GenConfig,
    episode_seed: int,
    initial_state: WorldState | None = None,
    world: World | None = None,
    episode_id: str | None = None,
) -> GeneratedEpisode:
    """Run the two-queue scheduler once and return the full trace."""
    if not segmented_demos:
        raise ConfigError("at least one segmented source demo is required")
    check_config(task, config)
    world = world or World(task, config.world)
    rng = np.random.default_rng(episode_seed)
    reset_seed = int(rng.integers(0, 2**63))
    n = len(segmented_demos)
    if config.source_selection == "same":
        k = int(rng.integers(n))
        picks = {arm: k for arm in ARMS}
    else:
        picks = {arm: int(rng.integers(n)) for arm in ARMS}
    state = initial_state if initial_state is not None else world.reset(config.variant, reset_seed)

    max_steps = config.max_episode_steps or task.max_episode_steps
    patience = config.deadlock_patience or max_steps
    queues = {arm: ActionQueue(arm, len(task.subtasks[arm])) for arm in ARMS}
    completed: dict[tuple[str, int], int] = {}
    shared: dict[str, Pose] = {}
    subtask_log: list[dict] = []
    log_index: dict[tuple[str, int], dict] = {}

    def source_of(st: SubtaskSpec) -> SegmentedDemo:
        arm = "left" if st.coordination is not None else st.arm
        return segmented_demos[picks[arm]]

    def blocked(arm: str, idx: int, t: int) -> bool:
        if not config.enforce_ordering:
            return False
        for c in task.sequential_constraints:
            if c.post == (arm, idx):
                done_at = completed.get(c.pre)
                if done_at is None or done_at >= t:
                    return True
        return False

    states = [state]
    actions: dict[str, list[ArmAction]] = {arm: [] for arm in ARMS}
    phases: list[dict[str, str]] = []
    segments: list[dict[str, int | None]] = []
    idle = 0
    timed_out = True
    for t in range(max_steps):
        if all(q.done for q in queues.values()):
            timed_out = False
            break
        for arm in ARMS:
            q = queues[arm]
            if q.pending or q.done or blocked(arm, q.subtask, t):
                continue
            st = task.subtasks[arm][q.subtask]
            sd = source_of(st)
            scheme = scheme_for(task, st, config)
            share = None
            if st.coordination is not None and scheme == "transform":
                g = st.coordination.group
                if g not in shared:
                    ref, src_pose = _coordination_pose(task, sd, g)
                    shared[g] = relative_transform(src_pose, world.observe_object_pose(state, ref, rng))
                share = shared[g]
            plan = build_subtask_plan(
                q, sd, state, scheme, share, world=world, n_interpolation_steps=config.n_interpolation_steps, rng=rng
            )
            q.load(plan)
            entry = {
                "arm": arm,
                "subtask": q.subtask,
                "source": sd.id,
                "scheme": scheme,
                "group": st.coordination.group if st.coordination else None,
                "transform": plan.transform.to_dict(),
                "start": t,
                "body_end": None,
            }
            subtask_log.append(entry)
            log_index[(arm, q.subtask)] = entry

        snap = {
            arm: (
                q.in_body,
                task.subtasks[arm][q.subtask].coordination if q.pending else None,
                q.remaining_in_segment,
            )
            for arm, q in queues.items()
        }
        chosen: dict[str, ArmAction] = {}
        step_phase: dict[str, str] = {}
        step_seg: dict[str, int | None] = {}
        for arm in ARMS:
            q = queues[arm]
            in_body, coord, remaining = snap[arm]
            seg_idx = q.subtask if q.pending else None
            if q.done:
                chosen[arm], phase = q.hold(state), "done"
            elif not q.pending:
                chosen[arm], phase = q.hold(state), "waiting-order"
            elif in_body and coord is not None:
                p_body, p_coord, p_remaining = snap["right" if arm == "left" else "left"]
                partner_ready = p_body and p_coord is not None and p_coord.group == coord.group
                if not partner_ready or p_remaining > remaining:
                    chosen[arm], phase = q.hold(state), "waiting-sync"
                else:
                    chosen[arm], _ = q.pop()
                    phase = "executing"
            else:
                chosen[arm], body = q.pop()
                phase = "executing" if body else "interpolating"
            if phase == "executing" and q.remaining_in_segment == 0:
                completed[(arm, q.subtask)] = t
                log_index[(arm, q.subtask)]["body_end"] = t
                q.subtask += 1
            q.phase = phase
            step_phase[arm] = phase
            step_seg[arm] = seg_idx

        if all(p in HOLD_PHASES for p in step_phase.values()) and not all(q.done for q in queues.values()):
            idle += 1
            if idle > patience:
                raise DeadlockError(
                    "deadlock: " + ", ".join(f"{a} {queues[a].phase} at subtask {queues[a].subtask}" for a in ARMS)
                )
        else:
            idle = 0

        for arm in ARMS:
            actions[arm].append(chosen[arm])
        phases.append(step_phase)
        segments.append(step_seg)
        state = world.step(state, chosen)
        states.append(state)
    else:
        timed_out = not all(q.done for q in queues.values())

    success = world.check_success(state)
    failure = None
    if not success:
        failure = "timeout" if timed_out else "predicate"
    provenance = {
        "kind": "generated",
        "seed": config.seed,
        "episode_seed": episode_seed,
        "reset_seed": reset_seed,
        "variant": config.variant if initial_state is None else None,
        "sources": {arm: segmented_demos[picks[arm]].id for arm in ARMS},
        "subtasks": subtask_log,
        "failure": failure,
    }
    return GeneratedEpisode(
        id=episode_id or f"ep-{episode_seed:016x}",
        task=task.name,
        states=states,
        actions=actions,
        success=success,
        phases=phases,
        segments=segments,
        provenance=provenance,
    )


# -- datasets ------------------------------------------------------------------------


@dataclass
class GenStats:
    attempts: int = 0
    successes: int = 0
    failures: dict[str, int] = field(default_factory=dict)
    budget_exhausted: bool = False

    @property
    def success_rate(self) -> float:
        return self.successes / self.attempts if self.attempts else 0.0

    def to_dict(self) -> dict:
        return {
            "attempts": self.attempts,
            "successes": self.successes,
            "success_rate": self.success_rate,
            "failures": dict(sorted(self.failures.items())),
            "budget_exhausted": self.budget_exhausted,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenStats":
        return cls(d["attempts"], d["successes"], dict(d["failures"]), d["budget_exhausted"])


Sink = Callable[[int, GeneratedEpisode], None]

_WORKER: dict = {}


def _init_worker(kind: str, task: TaskSpec, sources: list, config: GenConfig, extra: dict) -> None:
    _WORKER.update(kind=kind, task=task, sources=sources, config=config, extra=extra, world=World(task, config.world))


def _attempt(index: int) -> GeneratedEpisode:
    w = _WORKER
    seed = derive_seed(w["config"].seed, index)
    eid = f"ep-{index:06d}"
    if w["kind"] == "generate":
        try:
            return generate_episode(w["task"], w["sources"], w["config"], seed, world=w["world"], episode_id=eid)
        except DeadlockError as e:
            return GeneratedEpisode(eid, w["task"].name, [], {a: [] for a in ARMS}, False, [], [], {"failure": "deadlock", "error": str(e)})
    return _noisy_replay(w["task"], w["sources"], w["config"], seed, w["world"], eid, **w["extra"])


def _run(kind: str, task, sources, config: GenConfig, n_target: int, jobs: int, sink: Sink | None, extra: dict):
    if n_target < 1:
        raise ConfigError(f"n_target must be >= 1, got {n_target}")
    budget = config.max_attempts_factor * n_target
    stats = GenStats()
    kept: list[GeneratedEpisode] = []
    reasons: Counter = Counter()

    def consume(results: Iterable[GeneratedEpisode]) -> bool:
        for ep in results:
            index = stats.attempts
            stats.attempts += 1
            if ep.success:
                stats.successes += 1
            else:
                reasons[ep.failure or "unknown"] += 1
            if ep.success or (config.keep_failures and ep.states):
                if sink is not None:
                    sink(index, ep)
                else:
                    kept.append(ep)
            if stats.successes >= n_target:
                return True
        return False

    if jobs <= 1:
        _init_worker(kind, task, list(sources), config, extra)
        done = consume(_attempt(i) for i in range(budget))
    else:
        done = False
        window = jobs * 8
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(kind, task, list(sources), config, extra)) as ex:
            start = 0
            while not done and start < budget:
                stop = min(budget, start + window)
                done = consume(ex.map(_attempt, range(start, stop)))
                start = stop
    stats.budget_exhausted = not done
    stats.failures = dict(reasons)
    return kept, stats


def generate_dataset(
    task: TaskSpec,
    segmented_demos: Sequence[SegmentedDemo],
    config: GenConfig,
    n_target: int,
    jobs: int = 1,
    sink: Sink | None = None,
) -> tuple[list[GeneratedEpisode], GenStats]:
    """Generate until ``n_target`` successes or the attempt budget runs out.

    Attempt ``i`` always uses ``derive_seed(config.seed, i)`` and results are
    consumed in attempt order, so the output is the same for any ``jobs``.
    With a ``sink`` episodes are streamed to it instead of being returned.
    """
    check_config(task, config)
    if not segmented_demos:
        raise ConfigError("at least one segmented source demo is required")
    return _run("generate", task, segmented_demos, config, n_target, jobs, sink, {})


# -- demo-noise baseline -------------------------------------------------------------


def _truncated(rng: np.random.Generator, sigma: float, n: int) -> np.ndarray:
    if sigma == 0.0:
        return np.zeros(n)
    return np.clip(rng.normal(0.0, sigma, n), -3.0 * sigma, 3.0 * sigma)


def _noisy_replay(task, demos, config: GenConfig, seed: int, world: World, eid: str, variant: str | None):
    rng = np.random.default_rng(seed)
    reset_seed = int(rng.integers(0, 2**63))
    k = int(rng.integers(len(demos)))
    demo: SourceDemo = demos[k]
    state = demo.states[0] if variant is None else world.reset(variant, reset_seed)
    sp, sr, sh = config.noise or (0.0, 0.0, 0.0)
    states = [state]
    actions: dict[str, list[ArmAction]] = {arm: [] for arm in ARMS}
    for t in range(demo.horizon):
        chosen = {}
        for arm in ARMS:
            a = demo.actions[arm][t]
            dp = _truncated(rng, sp, 3)
            dr = _truncated(rng, sr, 3)
            dh = _truncated(rng, sh, len(a.hand.values))
            p = a.target
            target = Pose(
                (p.pos[0] + float(dp[0]), p.pos[1] + float(dp[1]), p.pos[2] + float(dp[2])),
                compose(Pose(quat=p.quat), Pose(quat=from_rotvec(dr.tolist()))).quat,
            )
            hand = world.clip_hand(HandAction(a.hand.kind, tuple(v + float(d) for v, d in zip(a.hand.values, dh))))
            chosen[arm] = ArmAction(target, hand)
            actions[arm].append(chosen[arm])
        state = world.step(state, chosen)
        states.append(state)
    success = world.check_success(state)
    H = demo.horizon
    return GeneratedEpisode(
        id=eid,
        task=task.name,
        states=states,
        actions=actions,
        success=success,
        phases=[{arm: "replay" for arm in ARMS} for _ in range(H)],
        segments=[{arm: None for arm in ARMS} for _ in range(H)],
        provenance={
            "kind": "demo-noise",
            "seed": config.seed,
            "episode_seed": seed,
            "reset_seed": reset_seed,
            "variant": variant,
            "sources": {arm: demo.id for arm in ARMS},
            "noise": list(config.noise or (0.0, 0.0, 0.0)),
            "failure": None if success else "predicate",
        },
    )


def demo_noise_baseline(
    task: TaskSpec,
    demos: SourceDemo | Sequence[SourceDemo],
    noise: tuple[float, float, float],
    config: GenConfig,
    n_target: int,
    variant: str | None = None,
    jobs: int = 1,
    sink: Sink | None = None,
) -> tuple[list[GeneratedEpisode], GenStats]:
    """Replay source actions with truncated Gaussian noise.

    By default each attempt starts from the demo's own initial state. With
    ``variant`` the scene is sampled from that reset distribution instead and
    the unmodified (noisy) source actions are still replayed.
    """
    if isinstance(demos, SourceDemo):
        demos = [demos]
    if not demos:
        raise ConfigError("at least one source demo is required")
    if variant is not None and variant not in task.reset_distributions:
        raise ConfigError(f"unknown reset variant '{variant}' for task '{task.name}'")
    config = replace(config, noise=tuple(float(s) for s in noise))
    return _run("baseline", task, demos, config, n_target, jobs, sink, {"variant": variant})


def noise_sigmas(noise: Sequence[float] | float) -> tuple[float, float, float]:
    """Expand a scalar position std or a 1-3 element list to (pos, rot, hand)."""
    if isinstance(noise, (int, float)):
        return (float(noise), 0.0, 0.0)
    vals = [float(v) for v in noise]
    if not 1 <= len(vals) <= 3 or any(not math.isfinite(v) or v < 0 for v in vals):
        raise ConfigError(f"noise must be 1-3 non-negative numbers, got {noise!r}")
    return tuple(vals + [0.0] * (3 - len(vals)))  # type: ignore[return-value]
