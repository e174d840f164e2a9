"""Line-oriented episode files, dataset directories, manifests and verification.

An episode file is JSON Lines: a header object followed by one record per
world state. Floats are written with ``repr`` (shortest round-trip form) and
keys in a fixed order, so identical values always give identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from dexgen.datagen import GenConfig, GeneratedEpisode, GenStats
from dexgen.demo import SegmentedDemo, SourceDemo, import_manual_segmentation
from dexgen.geometry import Pose
from dexgen.tasks import ARMS, TaskSpec, parse_task
from dexgen.world import ArmAction, Attachment, HandAction, ObjectState, Support, World, WorldState

FORMAT_VERSION = 1
DIGEST_ALGORITHM = "sha256"
MANIFEST = "manifest.json"


class DatasetError(ValueError):
    """Malformed, unreadable or unsupported dataset content."""


# -- value encoding ----------------------------------------------------------------


def _pose(p: Pose) -> dict:
    return {"pos": list(p.pos), "quat": list(p.quat)}


def _unpose(d: dict) -> Pose:
    return Pose(tuple(d["pos"]), tuple(d["quat"]))


def _arm_action(a: ArmAction) -> dict:
    return {"pos": list(a.target.pos), "quat": list(a.target.quat), "hand": list(a.hand.values)}


def _hand_kind(task: TaskSpec) -> str:
    return "gripper" if task.embodiment == "gripper" else "dexterous"


def _un_action(d: dict, kind: str) -> ArmAction:
    return ArmAction(_unpose(d), HandAction(kind, tuple(float(v) for v in d["hand"])))


def _state_body(s: WorldState) -> dict:
    objects = {}
    for oid, o in s.objects.items():
        rec = _pose(o.pose)
        if o.joint is not None:
            rec["joint"] = o.joint
        objects[oid] = rec
    return {
        "eef": {arm: {**_pose(s.eef[arm]), "hand": list(s.hand[arm].values)} for arm in ARMS},
        "objects": objects,
        "attach": {
            arm: None
            if s.attachments[arm] is None
            else {
                "object": s.attachments[arm].object,
                "offset": _pose(s.attachments[arm].offset),
                "since": s.attachments[arm].since,
            }
            for arm in ARMS
        },
        "support": {
            oid: {"container": s.supports[oid].container, "offset": _pose(s.supports[oid].offset)}
            for oid in sorted(s.supports)
        },
    }


def state_to_dict(s: WorldState) -> dict:
    return {"t": s.time, **_state_body(s), "frame": _pose(s.frame)}


def state_from_dict(d: dict, task: TaskSpec, frame: Pose | None = None) -> WorldState:
    kind = _hand_kind(task)
    objects = {}
    for oid, rec in d["objects"].items():
        spec = task.objects.get(oid)
        if spec is None:
            raise DatasetError(f"object '{oid}' is not part of task '{task.name}'")
        art = spec.articulation
        objects[oid] = ObjectState(oid, _unpose(rec), rec.get("joint"), None if art is None else art.limits)
    attach = {}
    for arm in ARMS:
        a = d["attach"][arm]
        attach[arm] = None if a is None else Attachment(a["object"], _unpose(a["offset"]), a["since"])
    return WorldState(
        time=d["t"],
        eef={arm: _unpose(d["eef"][arm]) for arm in ARMS},
        hand={arm: HandAction(kind, tuple(float(v) for v in d["eef"][arm]["hand"])) for arm in ARMS},
        objects=objects,
        attachments=attach,
        supports={oid: Support(r["container"], _unpose(r["offset"])) for oid, r in d["support"].items()},
        frame=frame if frame is not None else _unpose(d["frame"]),
    )


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


# -- episode files -------------------------------------------------------------------


@dataclass(eq=False)
class EpisodeRecord:
    """Everything stored in one episode file."""

    role: str
    id: str
    task: TaskSpec
    success: bool
    states: list[WorldState]
    actions: dict[str, list[ArmAction]]
    phases: list[dict]
    segments: list[dict]
    provenance: dict = field(default_factory=dict)
    segmentation: dict | None = None

    @property
    def length(self) -> int:
        return len(self.actions[ARMS[0]])


def episode_text(
    role: str,
    eid: str,
    task: TaskSpec,
    success: bool,
    states: Sequence[WorldState],
    actions: dict[str, Sequence[ArmAction]],
    phases: Sequence[dict] | None = None,
    segments: Sequence[dict] | None = None,
    provenance: dict | None = None,
    segmentation: dict | None = None,
) -> str:
    H = len(actions[ARMS[0]])
    if len(states) != H + 1:
        raise DatasetError(f"episode '{eid}': {len(states)} states for {H} actions")
    header = {
        "role": role,
        "format_version": FORMAT_VERSION,
        "id": eid,
        "task": task.name,
        "success": bool(success),
        "length": H,
        "task_spec": task.to_dict(),
        "initial_state": state_to_dict(states[0]),
        "provenance": provenance or {},
    }
    if segmentation is not None:
        header["segmentation"] = segmentation
    lines = [_dumps(header)]
    none = {arm: None for arm in ARMS}
    for t, s in enumerate(states):
        body = _state_body(s)
        rec = {
            "t": s.time,
            "eef": body["eef"],
            "action": {arm: _arm_action(actions[arm][t]) for arm in ARMS} if t < H else None,
            "objects": body["objects"],
            "phase": phases[t] if phases is not None and t < H else none,
            "segment": segments[t] if segments is not None and t < H else none,
            "attach": body["attach"],
            "support": body["support"],
        }
        lines.append(_dumps(rec))
    return "\n".join(lines) + "\n"


def generated_text(ep: GeneratedEpisode, task: TaskSpec) -> str:
    return episode_text("generated", ep.id, task, ep.success, ep.states, ep.actions, ep.phases, ep.segments, ep.provenance)


def demo_text(demo: SourceDemo | SegmentedDemo, task: TaskSpec) -> str:
    seg = demo if isinstance(demo, SegmentedDemo) else None
    d = seg.demo if seg is not None else demo
    H = d.horizon
    segments = None
    segmentation = None
    if seg is not None:
        segmentation = seg.boundaries()
        segments = [{arm: None for arm in ARMS} for _ in range(H)]
        for arm in ARMS:
            for s in seg.segments[arm]:
                for t in range(s.start, s.end):
                    segments[t][arm] = s.subtask
    phases = [{arm: "source" for arm in ARMS} for _ in range(H)]
    success = World(task).check_success(d.states[-1])
    return episode_text("source", d.id, task, success, d.states, d.actions, phases, segments, d.provenance, segmentation)


def _write_text(path: Path, text: str) -> str:
    data = text.encode()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(data)
        os.replace(tmp, path)
    except OSError as e:
        raise DatasetError(f"cannot write {path}: {e.strerror or e}") from e
    return hashlib.sha256(data).hexdigest()


def parse_episode(text: str, source: str = "<episode>", task: TaskSpec | None = None) -> EpisodeRecord:
    lines = text.splitlines()
    if not lines:
        raise DatasetError(f"{source}: empty episode file")
    parsed = []
    for i, line in enumerate(lines):
        try:
            parsed.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise DatasetError(f"{source}: invalid JSON on line {i + 1} (column {e.colno}: {e.msg})") from e
    header, records = parsed[0], parsed[1:]
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise DatasetError(f"{source}: unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    try:
        task = task if task is not None else parse_task(header["task_spec"], source)
        frame = _unpose(header["initial_state"]["frame"])
        kind = _hand_kind(task)
        states = [state_from_dict(r, task, frame) for r in records]
        H = len(records) - 1
        actions = {arm: [_un_action(records[t]["action"][arm], kind) for t in range(H)] for arm in ARMS}
        return EpisodeRecord(
            role=header["role"],
            id=header["id"],
            task=task,
            success=header["success"],
            states=states,
            actions=actions,
            phases=[r["phase"] for r in records[:H]],
            segments=[r["segment"] for r in records[:H]],
            provenance=header.get("provenance", {}),
            segmentation=header.get("segmentation"),
        )
    except (KeyError, TypeError, IndexError, ValueError) as e:
        if isinstance(e, DatasetError):
            raise
        raise DatasetError(f"{source}: malformed episode record ({type(e).__name__}: {e})") from e


def read_episode(path: str | Path, task: TaskSpec | None = None) -> EpisodeRecord:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise DatasetError(f"cannot read {path}: {e.strerror or e}") from e
    return parse_episode(text, str(path), task)


def save_demo(path: str | Path, demo: SourceDemo | SegmentedDemo, task: TaskSpec) -> str:
    """Write a source demo (with its segmentation, if given); returns the digest."""
    return _write_text(Path(path), demo_text(demo, task))


def load_demo(path: str | Path, task: TaskSpec | None = None) -> SourceDemo | SegmentedDemo:
    """Read a demo file; segmented files come back as SegmentedDemo."""
    rec = read_episode(path, task)
    if rec.role != "source":
        raise DatasetError(f"{path}: expected a source demo, found role '{rec.role}'")
    demo = SourceDemo(rec.id, rec.task.name, rec.states, rec.actions, rec.provenance)
    if rec.segmentation is None:
        return demo
    return import_manual_segmentation(demo, rec.task, {arm: list(rec.segmentation[arm]) for arm in ARMS})


def replay_check(rec: EpisodeRecord, world: World | None = None) -> tuple[int | None, bool]:
    """(first divergent step or None, recorded success matches the predicate)."""
    world = world or World(rec.task)
    s = rec.states[0]
    for t in range(rec.length):
        s = world.step(s, {arm: rec.actions[arm][t] for arm in ARMS})
        if s != rec.states[t + 1]:
            return t, rec.success == world.check_success(rec.states[-1])
    return None, rec.success == world.check_success(rec.states[-1])


# -- dataset directories ----------------------------------------------------------------


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def content_digest(entries: Iterable[tuple[str, str]]) -> str:
    h = hashlib.sha256()
    for name, digest in sorted(entries):
        h.update(f"{name} {digest}\n".encode())
    return h.hexdigest()


class DatasetWriter:
    """Streams episodes into a directory and finalizes the manifest.

    Episodes must be added in attempt order; the manifest is written once by
    :meth:`finalize`.
    """

    def __init__(
        self,
        root: str | Path,
        task: TaskSpec,
        config: GenConfig,
        sources: Sequence[SourceDemo | SegmentedDemo] = (),
        kind: str = "generated",
    ):
        self.root = Path(root)
        self.task = task
        self.config = config
        self.kind = kind
        self.index: list[dict] = []
        self.sources: list[dict] = []
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise DatasetError(f"cannot create {self.root}: {e.strerror or e}") from e
        for stale in ("episodes", "failures", "sources"):
            if (self.root / stale).is_dir():
                shutil.rmtree(self.root / stale)
        for i, d in enumerate(sources):
            name = f"sources/src_{i:03d}.jsonl"
            digest = _write_text(self.root / name, demo_text(d, task))
            self.sources.append({"id": d.id, "file": name, DIGEST_ALGORITHM: digest})

    def add(self, index: int, ep: GeneratedEpisode) -> None:
        folder = "episodes" if ep.success else "failures"
        name = f"{folder}/{ep.id}.jsonl"
        digest = _write_text(self.root / name, generated_text(ep, self.task))
        self.index.append(
            {
                "id": ep.id,
                "file": name,
                "attempt": index,
                "success": ep.success,
                "length": ep.length,
                "sources": ep.provenance.get("sources", {}),
                "schemes": [f"{e['arm']}:{e['subtask']}={e['scheme']}" for e in ep.provenance.get("subtasks", [])],
                DIGEST_ALGORITHM: digest,
            }
        )

    def finalize(self, stats: GenStats) -> dict:
        manifest = {
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "task": self.task.name,
            "task_spec": self.task.to_dict(),
            "config": self.config.to_dict(),
            "sources": self.sources,
            "episodes": self.index,
            "gen_stats": stats.to_dict(),
            "digest_algorithm": DIGEST_ALGORITHM,
            "content_digest": content_digest(
                [(e["file"], e[DIGEST_ALGORITHM]) for e in self.sources + self.index]
            ),
        }
        _write_text(self.root / MANIFEST, json.dumps(manifest, indent=1, allow_nan=False) + "\n")
        return manifest


def write_dataset(
    root: str | Path,
    episodes: Sequence[GeneratedEpisode],
    task: TaskSpec,
    config: GenConfig,
    stats: GenStats | None = None,
    sources: Sequence[SourceDemo | SegmentedDemo] = (),
    kind: str = "generated",
) -> dict:
    """Write episodes plus ``manifest.json``; returns the manifest."""
    w = DatasetWriter(root, task, config, sources, kind)
    for i, ep in enumerate(episodes):
        w.add(i, ep)
    if stats is None:
        n = sum(ep.success for ep in episodes)
        stats = GenStats(len(episodes), n, {"predicate": len(episodes) - n} if len(episodes) > n else {})
    return w.finalize(stats)


def read_manifest(root: str | Path) -> dict:
    path = Path(root) / MANIFEST
    try:
        manifest = json.loads(path.read_text())
    except OSError as e:
        raise DatasetError(f"cannot read {path}: {e.strerror or e}") from e
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path}: invalid JSON ({e})") from e
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise DatasetError(f"{path}: unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    return manifest


def manifest_task(manifest: dict) -> TaskSpec:
    return parse_task(manifest["task_spec"], "manifest.task_spec")


def iter_episodes(root: str | Path, manifest: dict | None = None, task: TaskSpec | None = None):
    root = Path(root)
    manifest = manifest or read_manifest(root)
    task = task or manifest_task(manifest)
    for entry in manifest["episodes"]:
        yield read_episode(root / entry["file"], task)


def read_dataset(root: str | Path) -> tuple[list[EpisodeRecord], dict]:
    manifest = read_manifest(root)
    return list(iter_episodes(root, manifest)), manifest


def read_sources(root: str | Path, manifest: dict | None = None, task: TaskSpec | None = None) -> list[EpisodeRecord]:
    root = Path(root)
    manifest = manifest or read_manifest(root)
    task = task or manifest_task(manifest)
    return [read_episode(root / s["file"], task) for s in manifest["sources"]]


def verify(root: str | Path, replay: bool = True) -> list[str]:
    """Integrity violations of a dataset directory (empty when clean)."""
    root = Path(root)
    try:
        manifest = read_manifest(root)
        task = manifest_task(manifest)
    except (DatasetError, ValueError) as e:
        return [str(e)]
    out: list[str] = []
    algo = manifest.get("digest_algorithm")
    if algo != DIGEST_ALGORITHM:
        return [f"unsupported digest algorithm {algo!r}"]
    entries = manifest["sources"] + manifest["episodes"]
    for e in entries:
        path = root / e["file"]
        if not path.is_file():
            out.append(f"missing file: {e['file']}")
        elif _file_digest(path) != e[algo]:
            out.append(f"digest mismatch: {e['file']}")
    if content_digest([(e["file"], e[algo]) for e in entries]) != manifest.get("content_digest"):
        out.append("content digest mismatch: manifest")
    keep_failures = manifest.get("config", {}).get("keep_failures", False)
    world = World(task, GenConfig.from_dict(manifest["config"]).world) if "config" in manifest else World(task)
    for e in manifest["episodes"]:
        path = root / e["file"]
        if not path.is_file():
            continue
        try:
            rec = read_episode(path, task)
        except DatasetError as err:
            out.append(str(err))
            continue
        if rec.success != e["success"] or rec.length != e["length"]:
            out.append(f"index mismatch: {e['file']}")
        if not rec.success and not keep_failures:
            out.append(f"unsuccessful episode indexed without the failures flag: {e['file']}")
        if replay:
            diverged, success_ok = replay_check(rec, world)
            if diverged is not None:
                out.append(f"replay divergence at step {diverged}: {e['file']}")
            if not success_ok:
                out.append(f"success mismatch: {e['file']}")
    return out
