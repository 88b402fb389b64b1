"""Skill library and controllers: inferred waypoints -> executable trajectories.

Each skill pairs a waypoint policy (a trained actor checkpoint) with a fixed
controller that expands K waypoints into a setpoint trajectory. Controllers
are pure functions of (waypoints, current pose); gripper commands fire on
arrival at their setpoint. The approach direction is along the negative tool
axis (gripper local +Z) of the waypoint orientation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Pose, euler_to_quat, geodesic_angle, slerp

APPROACH_OFFSET_M = 0.05
LOAD_POD_OFFSET_M = 0.02
LIFT_OFFSET_M = 0.05
MAX_STEP_POS_M = 0.05
MAX_STEP_ANG_RAD = np.deg2rad(10.0)
POUR_STEPS = 20
REORIENT_HEIGHT_M = 0.20

# Gripper pointing straight down (tool +Z aligned with world -Z).
DOWNWARD_QUAT = euler_to_quat(0.0, np.pi, 0.0)

SKILL_LABELS = (
    "pick",
    "place",
    "open",
    "close",
    "reorient_mug",
    "pour_cup",
    "refill_keurig",
    "load_pod",
)

# Labels the router may emit that map onto an existing skill.
LABEL_ALIASES = {"grasp": "pick"}


class UnknownSkill(KeyError):
    pass


class WaypointCountMismatch(ValueError):
    pass


@dataclass
class Trajectory:
    """Ordered (pose, gripper command) setpoints at a fixed timestep."""

    setpoints: list[tuple[Pose, str]]
    dt: float = 0.1

    def __post_init__(self):
        if len(self.setpoints) < 2:
            raise ValueError("trajectory needs at least 2 setpoints")
        for (a, _), (b, _) in zip(self.setpoints, self.setpoints[1:]):
            jump = float(np.linalg.norm(b.position - a.position))
            if jump > MAX_STEP_POS_M + 1e-9:
                raise ValueError(f"setpoint jump {jump:.4f} m exceeds {MAX_STEP_POS_M} m")

    def poses(self) -> list[Pose]:
        return [p for p, _ in self.setpoints]

    def commands(self) -> list[str]:
        return [c for _, c in self.setpoints]

    def to_jsonable(self):
        return {"dt": self.dt, "setpoints": [[p.to_list(), c] for p, c in self.setpoints]}

    @staticmethod
    def from_jsonable(obj) -> "Trajectory":
        return Trajectory(
            setpoints=[(Pose.from_list(p), c) for p, c in obj["setpoints"]], dt=obj["dt"]
        )


def interpolate(a: Pose, b: Pose, max_step_pos: float = MAX_STEP_POS_M,
                max_step_ang: float = MAX_STEP_ANG_RAD) -> list[Pose]:
    """Uniform pose interpolation with bounded per-step translation/rotation.

    Returns [a, ..., b] with endpoints exact; [a, b] when the poses coincide.
    """
    pos_dist = float(np.linalg.norm(b.position - a.position))
    ang_dist = geodesic_angle(a.orientation, b.orientation)
    n = max(1, int(np.ceil(max(pos_dist / max_step_pos, ang_dist / max_step_ang))))
    out = []
    for i in range(n + 1):
        t = i / n
        out.append(
            Pose((1.0 - t) * a.position + t * b.position, slerp(a.orientation, b.orientation, t))
        )
    out[0], out[-1] = a, b
    return out


def _offset(pose: Pose, delta) -> Pose:
    return Pose(pose.position + np.asarray(delta, dtype=np.float64), pose.orientation)


def _approach_point(wp: Pose, dist: float = APPROACH_OFFSET_M) -> Pose:
    return Pose(wp.position - dist * wp.approach_axis(), wp.orientation)


def _pick_setpoints(wp: Pose):
    ap = _approach_point(wp)
    return [(ap, "open"), (wp, "close"), (_offset(wp, (0, 0, LIFT_OFFSET_M)), "hold")]


def _place_setpoints(wp: Pose):
    return [(_offset(wp, (0, 0, APPROACH_OFFSET_M)), "open")]


def _open_setpoints(wp: Pose):
    ap = _approach_point(wp)
    return [(ap, "open"), (wp, "close"), (ap, "hold"), (ap, "open")]


def _close_setpoints(wp: Pose):
    return [(_approach_point(wp), "hold"), (wp, "hold")]


def _reorient_setpoints(wp: Pose):
    ap = _approach_point(wp)
    upright = Pose((wp.position[0], wp.position[1], REORIENT_HEIGHT_M), DOWNWARD_QUAT)
    return [(ap, "open"), (wp, "close"), (upright, "hold")]


def _pour_setpoints(wp: Pose):
    start = Pose(wp.position, DOWNWARD_QUAT)
    steps = [(start, "hold")]
    for i in range(1, POUR_STEPS + 1):
        steps.append((Pose(wp.position, slerp(DOWNWARD_QUAT, wp.orientation, i / POUR_STEPS)), "hold"))
    return steps


def _load_pod_setpoints(wp: Pose):
    above = _offset(wp, (0, 0, LOAD_POD_OFFSET_M))
    return [(above, "hold"), (above, "open"), (wp, "hold")]


_CONTROLLERS = {
    "pick": (_pick_setpoints, 1),
    "place": (_place_setpoints, 1),
    "open": (_open_setpoints, 1),
    "close": (_close_setpoints, 1),
    "reorient_mug": (_reorient_setpoints, 1),
    "pour_cup": (_pour_setpoints, 1),
    "refill_keurig": (_pour_setpoints, 1),
    "load_pod": (_load_pod_setpoints, 1),
}


@dataclass
class SkillEntry:
    label: str
    k_waypoints: int
    controller: str
    actor_checkpoint: str | None = None
    actor: object = None  # loaded ActorModel, filled in by the pipeline


class SkillLibrary:
    """Immutable label -> SkillEntry map with router-alias resolution."""

    def __init__(self, entries: list[SkillEntry]):
        self._entries = {}
        for e in entries:
            if e.label in self._entries:
                raise ValueError(f"duplicate skill label {e.label!r}")
            self._entries[e.label] = e

    def labels(self) -> list[str]:
        return list(self._entries)

    def resolve(self, label: str) -> str:
        label = label.strip().lower()
        label = LABEL_ALIASES.get(label, label)
        if label not in self._entries:
            raise UnknownSkill(label)
        return label

    def lookup(self, label: str) -> SkillEntry:
        return self._entries[self.resolve(label)]

    def to_manifest(self) -> dict:
        return {
            e.label: {
                "k_waypoints": e.k_waypoints,
                "controller": e.controller,
                "actor_checkpoint": e.actor_checkpoint,
            }
            for e in self._entries.values()
        }

    def save_manifest(self, path):
        Path(path).write_text(json.dumps(self.to_manifest(), indent=2, sort_keys=True))

    @staticmethod
    def from_manifest(obj: dict) -> "SkillLibrary":
        return SkillLibrary(
            [
                SkillEntry(
                    label=label,
                    k_waypoints=spec["k_waypoints"],
                    controller=spec["controller"],
                    actor_checkpoint=spec.get("actor_checkpoint"),
                )
                for label, spec in obj.items()
            ]
        )

    @staticmethod
    def load_manifest(path) -> "SkillLibrary":
        return SkillLibrary.from_manifest(json.loads(Path(path).read_text()))


def default_library(actor_paths: dict[str, str] | None = None) -> SkillLibrary:
    actor_paths = actor_paths or {}
    return SkillLibrary(
        [
            SkillEntry(
                label=label,
                k_waypoints=_CONTROLLERS[label][1],
                controller=label,
                actor_checkpoint=actor_paths.get(label),
            )
            for label in SKILL_LABELS
        ]
    )


def run_controller(label: str, waypoints: list[Pose], current: Pose,
                   library: SkillLibrary | None = None) -> Trajectory:
    """Expand the skill's waypoints into a dense trajectory starting at `current`."""
    if library is not None:
        label = library.resolve(label)
    if label not in _CONTROLLERS:
        raise UnknownSkill(label)
    builder, k = _CONTROLLERS[label]
    if len(waypoints) != k:
        raise WaypointCountMismatch(f"{label} expects {k} waypoints, got {len(waypoints)}")

    logical = builder(*waypoints)
    setpoints: list[tuple[Pose, str]] = [(current, "hold")]
    for pose, cmd in logical:
        prev = setpoints[-1][0]
        for p in interpolate(prev, pose)[1:-1]:
            setpoints.append((p, "hold"))
        setpoints.append((pose, cmd))
    return Trajectory(setpoints=setpoints)
