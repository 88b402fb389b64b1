"""Task sampling, instruction templates, and scripted expert demonstrations.

Every training example in the system is produced here: per-skill
demonstrations (initial observation, ideal waypoints computed from ground
truth, instruction, projected keypoint label) and grounding-only
supplemental labels. Instruction phrasings live in JSON template files next
to this module so the paraphrase pool and clutter level are configurable per
difficulty tier.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from ..geometry import Pose, euler_to_quat, quat_multiply
from ..skills import DOWNWARD_QUAT, run_controller
from . import scene as sc
from .world import (
    Observation,
    Occluded,
    WorldState,
    anchor_world,
    apply_trajectory,
    check_success,
    ground_truth_keypoint,
    observe,
    reset,
)

POUR_HEIGHT_M = 0.10
POUR_TILT_RAD = 1.8
FACE_DRAWER_QUAT = euler_to_quat(0.0, np.pi / 2, 0.0)  # tool +Z along +x
POUR_QUAT = quat_multiply(DOWNWARD_QUAT, euler_to_quat(0.0, 0.0, POUR_TILT_RAD))

DRAWER_WORDS = {0: "bottom", 1: "middle", 2: "top"}

SKILLS = (
    "pick",
    "place",
    "open",
    "close",
    "reorient_mug",
    "pour_cup",
    "refill_keurig",
    "load_pod",
)


class InfeasibleTask(RuntimeError):
    pass


@dataclass
class TaskSpec:
    skill: str
    target: tuple  # grounding target, e.g. ("object", "lemon", "grasp") / ("drawer", 2)
    instruction: str
    success_params: dict = field(default_factory=dict)
    tier: int = 1
    seed: int = 0
    place_target: tuple | None = None  # second-step grounding target for compounds

    def to_jsonable(self):
        return {
            "skill": self.skill,
            "target": list(self.target),
            "instruction": self.instruction,
            "success_params": self.success_params,
            "tier": self.tier,
            "seed": self.seed,
            "place_target": list(self.place_target) if self.place_target else None,
        }


_TEMPLATE_CACHE: dict[str, list] = {}


def load_templates(name: str) -> list[dict]:
    if name not in _TEMPLATE_CACHE:
        text = resources.files("groundact.sim").joinpath(f"templates/{name}.json").read_text()
        _TEMPLATE_CACHE[name] = json.loads(text)
    return _TEMPLATE_CACHE[name]


def sample_instruction(name: str, rng: np.random.Generator, tier: int, slots: dict) -> str:
    pool = []
    for t in load_templates(name):
        if t["tier"] > tier:
            continue
        req = t.get("requires", {})
        if any(slots.get(k) != v for k, v in req.items()):
            continue
        pool.append(t["text"])
    if not pool:
        raise ValueError(f"no usable template in {name} for tier {tier} / {slots}")
    return pool[int(rng.integers(len(pool)))].format(**slots)


# ---------------------------------------------------------------------------
# Scene construction per skill


def _base_placement_region() -> tuple:
    return (0.31, 0.54, -0.22, 0.22)


def _make_objects(rng, names, sideways=(), held=None):
    objects = [sc.table()]
    placements = {"table": sc.Placement(fixed=Pose.identity())}
    region = _base_placement_region()
    for name in names:
        spec = sc.CATALOG[name]() if name in sc.CATALOG else None
        if spec is None:
            raise KeyError(name)
        objects.append(spec)
        placements[spec.name] = sc.Placement(
            region=region,
            yaw_random=spec.parts[0].kind == "box",
            sideways=spec.name in sideways,
        )
    return objects, placements


def _distractors(rng, pool, n):
    pool = list(pool)
    idx = rng.permutation(len(pool))[:n]
    return [pool[i] for i in idx]


def make_episode(skill: str, seed: int, tier: int = 1):
    """Build (SceneSpec, WorldState, TaskSpec) for one seeded episode."""
    rng = np.random.default_rng(seed)
    cab_y = float(rng.uniform(-0.08, 0.08))
    n_extra = int(rng.integers(0, 2 if tier == 1 else 4))
    cabinet = sc.CabinetSpec(x=0.66, y=cab_y)
    held = None
    sideways = ()
    pod_color = None

    if skill in ("pick", "place", "pick_place"):
        target = sc.PICKABLE[int(rng.integers(len(sc.PICKABLE)))]
        dest = sc.DESTINATIONS[int(rng.integers(len(sc.DESTINATIONS)))]
        others = [n for n in sc.PICKABLE if n != target]
        names = [target, "bowl", "plate"] + _distractors(rng, others, n_extra)
        if skill == "place":
            held = target
    elif skill in ("open", "close"):
        target = int(rng.integers(3))
        names = _distractors(rng, sc.PICKABLE, n_extra)
    elif skill == "reorient_mug":
        names = ["mug"] + _distractors(rng, sc.PICKABLE, n_extra)
        sideways = ("mug",)
        cabinet = None
    elif skill == "pour_cup":
        vessel = ["cup", "mug"][int(rng.integers(2))]
        names = ["cup", "mug", "pitcher"]
        held = "pitcher"
        cabinet = None
    elif skill == "refill_keurig":
        names = ["keurig", "cup", "pitcher"]
        held = "pitcher"
        cabinet = None
    elif skill == "load_pod":
        pod_color = list(sc.POD_COLORS)[int(rng.integers(len(sc.POD_COLORS)))]
        names = ["keurig"]
        held = "pod"
        cabinet = None
    else:
        raise ValueError(f"unknown skill {skill!r}")

    objects, placements = _make_objects(rng, names, sideways=sideways)
    if skill == "load_pod":
        objects.append(sc.pod(pod_color))
        placements["pod"] = sc.Placement(region=_base_placement_region())

    gripper_home = Pose.from_euler((0.42, 0.0, 0.30), 0.0, np.pi, 0.0)
    if skill == "place":
        # vary the held-object start so place training covers post-pick states
        gripper_home = Pose(
            (
                float(rng.uniform(0.32, 0.52)),
                float(rng.uniform(-0.18, 0.18)),
                float(rng.uniform(0.12, 0.30)),
            ),
            DOWNWARD_QUAT,
        )

    drawer_ext = [0.0, 0.0, 0.0]
    if skill == "close":
        drawer_ext[target] = float(rng.uniform(0.85, 1.0))

    spec = sc.SceneSpec(
        objects=objects,
        placements=placements,
        cameras=sc.default_cameras(),
        cabinet=cabinet,
        seed=int(rng.integers(2**31)),
        initial_drawer_ext=tuple(drawer_ext),
        held_object=held,
        gripper_home=gripper_home,
    )
    state = reset(spec)

    # task + instruction + success parameters
    if skill == "pick":
        compound = rng.uniform() < 0.4
        slots = {"obj": target, "dest": dest}
        instruction = sample_instruction("pick_place" if compound else "pick", rng, tier, slots)
        task = TaskSpec(
            skill="pick",
            target=("object", target, "grasp"),
            instruction=instruction,
            success_params={"object": target, "start_z": float(state.object_poses[target].position[2])},
            tier=tier,
            seed=seed,
        )
    elif skill == "place":
        instruction = sample_instruction("pick_place", rng, tier, {"obj": target, "dest": dest})
        task = TaskSpec(
            skill="place",
            target=("object", dest, "interior"),
            instruction=instruction,
            success_params=_place_success(spec, state, target, dest),
            tier=tier,
            seed=seed,
        )
    elif skill == "pick_place":
        instruction = sample_instruction("pick_place", rng, tier, {"obj": target, "dest": dest})
        task = TaskSpec(
            skill="pick_place",
            target=("object", target, "grasp"),
            instruction=instruction,
            success_params=_place_success(spec, state, target, dest),
            tier=tier,
            seed=seed,
            place_target=("object", dest, "interior"),
        )
    elif skill in ("open", "close"):
        instruction = sample_instruction(skill, rng, tier, {"pos": DRAWER_WORDS[target]})
        task = TaskSpec(
            skill=skill,
            target=("drawer", target),
            instruction=instruction,
            success_params={"drawer": target},
            tier=tier,
            seed=seed,
        )
    elif skill == "reorient_mug":
        instruction = sample_instruction(skill, rng, tier, {})
        task = TaskSpec(
            skill=skill,
            target=("object", "mug", "grasp"),
            instruction=instruction,
            success_params={"object": "mug"},
            tier=tier,
            seed=seed,
        )
    elif skill == "pour_cup":
        instruction = sample_instruction(skill, rng, tier, {"vessel": vessel})
        goal = _pour_goal(spec, state, vessel, "opening")
        task = TaskSpec(
            skill=skill,
            target=("object", vessel, "opening"),
            instruction=instruction,
            success_params={"commanded_pose": goal.to_list()},
            tier=tier,
            seed=seed,
        )
    elif skill == "refill_keurig":
        instruction = sample_instruction(skill, rng, tier, {})
        goal = _pour_goal(spec, state, "keurig", "refill")
        task = TaskSpec(
            skill=skill,
            target=("object", "keurig", "refill"),
            instruction=instruction,
            success_params={"commanded_pose": goal.to_list()},
            tier=tier,
            seed=seed,
        )
    else:  # load_pod
        instruction = sample_instruction(skill, rng, tier, {"color": pod_color})
        slot_pt, _ = anchor_world(spec, state, ("object", "keurig", "slot"))
        slot_spec = spec.object("keurig").containers["slot"]
        task = TaskSpec(
            skill=skill,
            target=("object", "keurig", "slot"),
            instruction=instruction,
            success_params={
                "object": "pod",
                "slot_center": [float(slot_pt[0]), float(slot_pt[1])],
                "rim_z": float(state.object_poses["keurig"].position[2] + slot_spec.rim_z),
                "pod_half_height": 0.009,
            },
            tier=tier,
            seed=seed,
        )
    return spec, state, task


def _place_success(spec, state, target, dest):
    dest_spec = spec.object(dest)
    c = dest_spec.containers["interior"]
    dpose = state.object_poses[dest]
    rest_z = dpose.position[2] + c.floor_z + spec.object(target).rest_half_height()
    return {
        "object": target,
        "destination": dest,
        "rest_point": [float(dpose.position[0]), float(dpose.position[1]), float(rest_z)],
    }


def _pour_goal(spec, state, vessel, anchor) -> Pose:
    pt, _ = anchor_world(spec, state, ("object", vessel, anchor))
    return Pose(pt + np.array([0.0, 0.0, POUR_HEIGHT_M]), POUR_QUAT)


# ---------------------------------------------------------------------------
# Scripted expert waypoints


def scripted_waypoints(skill: str, spec: sc.SceneSpec, state: WorldState, task: TaskSpec) -> list[Pose]:
    p = task.success_params
    if skill == "pick":
        name = p["object"]
        obj_pose = state.object_poses[name]
        anchor, _ = anchor_world(spec, state, ("object", name, "grasp"))
        yaw = obj_pose.to_euler()[0] if spec.object(name).parts[0].kind == "box" else 0.0
        return [Pose(anchor, euler_to_quat(yaw, np.pi, 0.0))]
    if skill == "place":
        # the gripper holds objects at their center, so releasing anywhere
        # above the rest point drops the center onto it
        rest = np.asarray(p["rest_point"])
        return [Pose((rest[0], rest[1], rest[2] + 0.02), DOWNWARD_QUAT)]
    if skill == "open":
        j = p["drawer"]
        return [Pose(spec.cabinet.handle_center(j, float(state.drawer_ext[j])), FACE_DRAWER_QUAT)]
    if skill == "close":
        j = p["drawer"]
        return [Pose(spec.cabinet.handle_center(j, 0.0), FACE_DRAWER_QUAT)]
    if skill == "reorient_mug":
        mug_pose = state.object_poses[p["object"]]
        return [Pose(mug_pose.position, quat_multiply(mug_pose.orientation, DOWNWARD_QUAT))]
    if skill in ("pour_cup", "refill_keurig"):
        return [Pose.from_list(p["commanded_pose"])]
    if skill == "load_pod":
        slot = p["slot_center"]
        slot_pt, _ = anchor_world(spec, state, ("object", "keurig", "slot"))
        return [Pose((slot[0], slot[1], float(slot_pt[2])), DOWNWARD_QUAT)]
    raise ValueError(f"no scripted policy for {skill!r}")


@dataclass
class Demonstration:
    """One expert demo: initial observation + waypoints + grounding label."""

    skill: str
    instruction: str
    image: np.ndarray  # (H, W, 3) uint8 grounding frame
    depth: np.ndarray  # (H, W) grounding-camera depth
    cloud: np.ndarray  # (D, 6)
    keypoint: tuple[int, int]
    waypoints: list[Pose]
    task: TaskSpec


def scripted_demo(
    spec: sc.SceneSpec, state: WorldState, task: TaskSpec, verify: bool = True
) -> Demonstration:
    """Compute ideal waypoints from ground truth and package a demonstration.

    With verify=True the demo is replayed through its own controller and must
    pass the task's success check.
    """
    obs = observe(state, spec)
    keypoint = ground_truth_keypoint(state, spec, task.target, obs)
    waypoints = scripted_waypoints(task.skill, spec, state, task)
    if verify:
        traj = run_controller(task.skill, waypoints, state.gripper)
        final = apply_trajectory(state, traj, spec)
        if not check_success(final, task, spec):
            raise InfeasibleTask(f"scripted replay failed for {task.skill} seed {task.seed}")
    return Demonstration(
        skill=task.skill,
        instruction=task.instruction,
        image=obs.image,
        depth=obs.depth,
        cloud=obs.cloud,
        keypoint=keypoint,
        waypoints=waypoints,
        task=task,
    )


def generate_demo(skill: str, seed: int, tier: int = 1, max_attempts: int = 20) -> Demonstration:
    """Sample episodes until one yields a feasible, verified demonstration."""
    for attempt in range(max_attempts):
        try:
            spec, state, task = make_episode(skill, seed + 7919 * attempt, tier)
            return scripted_demo(spec, state, task)
        except (Occluded, InfeasibleTask):
            continue
    raise InfeasibleTask(f"no feasible {skill} demo near seed {seed}")


def generate_demos(skill: str, count: int, seed: int = 0, tier: int = 1) -> list[Demonstration]:
    return [generate_demo(skill, seed + 1000 * i, tier) for i in range(count)]


def generate_supplemental(count: int, seed: int = 0, tier: int = 1):
    """Grounding-only labels: (image, instruction, pixel, skill), no waypoints."""
    from ..grounding import GroundingSample

    out = []
    i = 0
    rng = np.random.default_rng(seed)
    while len(out) < count:
        skill = SKILLS[int(rng.integers(len(SKILLS)))]
        try:
            spec, state, task = make_episode(skill, seed + 31 * i + 1, tier)
            obs = observe(state, spec)
            pixel = ground_truth_keypoint(state, spec, task.target, obs)
            out.append(
                GroundingSample(
                    image=obs.image, instruction=task.instruction, pixel=pixel, skill=task.skill
                )
            )
        except (Occluded, InfeasibleTask):
            pass
        i += 1
        if i > count * 20:
            raise InfeasibleTask("supplemental generation stalled")
    return out
