"""Source demonstrations and their per-arm object-centric segmentation."""

from __future__ import annotations

from dataclasses import dataclass, field

from dexgen.expert import ExpertError, run_expert
from dexgen.geometry import Pose
from dexgen.tasks import ARMS, TaskSpec, Termination
from dexgen.world import ArmAction, World, WorldState


class SegmentationError(ValueError):
    """A demo could not be split into the task's subtasks."""


@dataclass(eq=False)
class SourceDemo:
    id: str
    task: str
    states: list[WorldState]
    actions: dict[str, list[ArmAction]]
    provenance: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return len(self.actions[ARMS[0]])

    def action_at(self, t: int) -> dict[str, ArmAction]:
        return {arm: self.actions[arm][t] for arm in ARMS}


@dataclass(frozen=True)
class Segment:
    arm: str
    subtask: int
    start: int
    end: int
    raw_end: int = field(compare=False)  # boundary before coordination alignment
    reference: str = ""
    ref_pose: Pose = Pose()  # reference object pose at ``start``
    group: str | None = None

    def __len__(self) -> int:
        return self.end - self.start

    @property
    def padding(self) -> int:
        """Steps appended by coordination alignment."""
        return self.end - self.raw_end


@dataclass(eq=False)
class SegmentedDemo:
    demo: SourceDemo
    segments: dict[str, list[Segment]]
    # per coordination group: (source step, reference pose) at the earlier member start
    group_refs: dict[str, tuple[int, Pose]] = field(default_factory=dict)

    @property
    def id(self) -> str:
        return self.demo.id

    def actions(self, seg: Segment) -> list[ArmAction]:
        return self.demo.actions[seg.arm][seg.start : seg.end]

    def boundaries(self) -> dict[str, list[int]]:
        return {arm: [s.end for s in self.segments[arm]] for arm in ARMS}

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, SegmentedDemo)
            and self.demo is other.demo
            and self.segments == other.segments
            and self.group_refs == other.group_refs
        )


def replay(world: World, initial: WorldState, actions: dict[str, list[ArmAction]]) -> list[WorldState]:
    states = [initial]
    s = initial
    for t in range(len(actions[ARMS[0]])):
        s = world.step(s, {arm: actions[arm][t] for arm in ARMS})
        states.append(s)
    return states


def is_consistent(demo: SourceDemo, world: World) -> bool:
    """Replaying the actions from the first state reproduces every recorded state."""
    return replay(world, demo.states[0], demo.actions) == demo.states


def scripted_expert(task: TaskSpec, seed: int, variant: str = "D0", demo_id: str | None = None) -> SourceDemo:
    """A successful demonstration from the task's waypoint expert.

    Raises ExpertError when the rollout does not end in success; callers may
    retry with another seed.
    """
    world = World(task)
    start = world.reset(variant, seed)
    states, actions = run_expert(task, start, world)
    if not world.check_success(states[-1]):
        raise ExpertError(f"{task.name}: expert rollout for seed {seed} did not succeed")
    return SourceDemo(
        id=demo_id or f"{task.name}-{seed}",
        task=task.name,
        states=states,
        actions=actions,
        provenance={"kind": "scripted-expert", "seed": seed, "variant": variant},
    )


def _fires(term: Termination, arm: str, before: WorldState, after: WorldState) -> bool:
    def holds(s: WorldState) -> bool:
        if term.kind == "attach":
            a = s.attachments[arm]
            return a is not None and a.object == term.object
        if term.kind == "detach":
            a = s.attachments[arm]
            return a is None or a.object != term.object
        if term.kind == "enter_region":
            sup = s.supports.get(term.object)
            return sup is not None and sup.container == term.container
        j = s.objects[term.object].joint
        return j is not None and j >= term.value

    if term.kind == "detach":
        a = before.attachments[arm]
        return a is not None and a.object == term.object and holds(after)
    return holds(after) and not holds(before)


def heuristic_boundaries(demo: SourceDemo, task: TaskSpec) -> dict[str, list[int]]:
    """Raw per-arm segment end steps from the termination predicates."""
    H = demo.horizon
    out = {}
    for arm in ARMS:
        ends = []
        prev = 0
        for st in task.subtasks[arm][:-1]:
            if not isinstance(st.termination, Termination):
                raise SegmentationError(
                    f"arm '{arm}' subtask {st.index}: termination is manual; use import_manual_segmentation"
                )
            b = next(
                (s for s in range(prev + 1, H + 1) if _fires(st.termination, arm, demo.states[s - 1], demo.states[s])),
                None,
            )
            if b is None:
                raise SegmentationError(
                    f"arm '{arm}' subtask {st.index}: termination '{st.termination.kind}' never fires"
                )
            ends.append(b)
            prev = b
        ends.append(H)
        out[arm] = ends
    return out


def _build(demo: SourceDemo, task: TaskSpec, raw: dict[str, list[int]]) -> SegmentedDemo:
    ends = {arm: list(raw[arm]) for arm in ARMS}
    for gid, members in task.coordination_groups().items():
        e = max(ends[arm][st.index] for arm, st in members.items())
        for arm, st in members.items():
            ends[arm][st.index] = e
    segments: dict[str, list[Segment]] = {}
    for arm in ARMS:
        segs = []
        start = 0
        for st, end in zip(task.subtasks[arm], ends[arm]):
            if end <= start:
                raise SegmentationError(
                    f"arm '{arm}' subtask {st.index}: empty segment [{start}, {end}) after coordination alignment"
                )
            if st.reference not in demo.states[start].objects:
                raise SegmentationError(f"arm '{arm}' subtask {st.index}: reference object '{st.reference}' missing")
            segs.append(
                Segment(
                    arm=arm,
                    subtask=st.index,
                    start=start,
                    end=end,
                    raw_end=raw[arm][st.index],
                    reference=st.reference,
                    ref_pose=demo.states[start].objects[st.reference].pose,
                    group=st.coordination.group if st.coordination else None,
                )
            )
            start = end
        segments[arm] = segs
    group_refs = {}
    for gid, members in task.coordination_groups().items():
        first = min(segments[arm][st.index].start for arm, st in members.items())
        ref = members["left"].reference
        group_refs[gid] = (first, demo.states[first].objects[ref].pose)
    return SegmentedDemo(demo, segments, group_refs)


def segment(demo: SourceDemo, task: TaskSpec) -> SegmentedDemo:
    """Split a demo into per-arm segments at termination-predicate events.

    Coordination-group members are extended to the later of their two
    boundaries, so both arms' segments end on the same step.
    """
    return _build(demo, task, heuristic_boundaries(demo, task))


def import_manual_segmentation(demo: SourceDemo, task: TaskSpec, boundaries: dict[str, list[int]]) -> SegmentedDemo:
    """Segment with human-given end steps (one per subtask, the last equal to the horizon)."""
    H = demo.horizon
    for arm in ARMS:
        if arm not in boundaries:
            raise SegmentationError(f"manual boundaries: missing arm '{arm}'")
        b = boundaries[arm]
        m = len(task.subtasks[arm])
        if not isinstance(b, list) or not all(isinstance(x, int) for x in b):
            raise SegmentationError(f"manual boundaries for '{arm}': expected a list of integer steps")
        if len(b) != m:
            raise SegmentationError(f"manual boundaries for '{arm}': expected {m} boundaries, got {len(b)}")
        if any(x < 1 or x > H for x in b):
            raise SegmentationError(f"manual boundaries for '{arm}': steps must lie in [1, {H}]")
        if any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
            raise SegmentationError(f"manual boundaries for '{arm}': steps must be strictly increasing")
        if b[-1] != H:
            raise SegmentationError(f"manual boundaries for '{arm}': last boundary must equal the horizon {H}")
    return _build(demo, task, {arm: list(boundaries[arm]) for arm in ARMS})


def validate(segmented: SegmentedDemo, task: TaskSpec) -> list[str]:
    """Violations of coverage, contiguity and coordination alignment (empty when valid)."""
    out = []
    H = segmented.demo.horizon
    for arm in ARMS:
        segs = segmented.segments.get(arm, [])
        if len(segs) != len(task.subtasks[arm]):
            out.append(f"{arm}: expected {len(task.subtasks[arm])} segments, found {len(segs)}")
        pos = 0
        for seg in segs:
            if seg.start != pos:
                out.append(f"{arm} subtask {seg.subtask}: starts at {seg.start}, expected {pos} (gap or overlap)")
            if seg.end <= seg.start:
                out.append(f"{arm} subtask {seg.subtask}: empty segment [{seg.start}, {seg.end})")
            if seg.reference not in task.objects:
                out.append(f"{arm} subtask {seg.subtask}: unknown reference object '{seg.reference}'")
            pos = seg.end
        if segs and pos != H:
            out.append(f"{arm}: segments end at {pos}, expected horizon {H}")
    for gid, members in task.coordination_groups().items():
        try:
            ends = {arm: segmented.segments[arm][st.index].end for arm, st in members.items()}
        except (KeyError, IndexError):
            out.append(f"coordination group '{gid}': missing member segment")
            continue
        if len(set(ends.values())) != 1:
            out.append(f"coordination group '{gid}': misaligned ends " + ", ".join(f"{a}={e}" for a, e in ends.items()))
    return out
