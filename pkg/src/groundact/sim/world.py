"""Kinematic world: placement, observation, gripper execution, success checks.

Physics is deliberately kinematic: a close command within reach of a
graspable anchor rigidly attaches the object; opening releases it and it
drops straight down to the highest support surface under it; drawer handles
can be pulled while held and pushed by contact. There is no dynamics engine.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import cv2
import numpy as np

from ..geometry import (
    Pose,
    geodesic_angle,
    project,
    quat_conjugate,
    quat_multiply,
    rotate_vec,
)
from ..skills import Trajectory
from .render import RenderPrim, render_camera
from .scene import CabinetSpec, ObjectSpec, SceneSpec

GRASP_RADIUS_M = 0.02
HANDLE_CONTACT_M = 0.02
MICRO_STEP_M = 0.005  # contact integration granularity along setpoint motions
OCCLUSION_DEPTH_TOL_M = 0.005


class PlacementFailure(RuntimeError):
    """Rejection sampling could not place all objects without overlap."""


class Occluded(RuntimeError):
    """Target part not visible in the grounding camera."""


@dataclass
class WorldState:
    object_poses: dict[str, Pose]
    drawer_ext: np.ndarray  # per-drawer extension in [0, 1]
    gripper: Pose
    gripper_open: bool = True
    held: tuple | None = None  # ("object", name, rel Pose) | ("drawer", index)

    def copy(self) -> "WorldState":
        return WorldState(
            object_poses=dict(self.object_poses),
            drawer_ext=self.drawer_ext.copy(),
            gripper=self.gripper,
            gripper_open=self.gripper_open,
            held=self.held,
        )

    def held_object_name(self) -> str | None:
        if self.held and self.held[0] == "object":
            return self.held[1]
        return None


def _sync_held_object(state: WorldState):
    if state.held and state.held[0] == "object":
        _, name, rel = state.held
        state.object_poses[name] = state.gripper.compose(rel)


# ---------------------------------------------------------------------------
# Reset / placement


def reset(spec: SceneSpec, max_attempts: int = 100) -> WorldState:
    """Deterministic seeded placement with bounding-circle rejection sampling."""
    rng = np.random.default_rng(spec.seed)
    poses: dict[str, Pose] = {}
    placed: list[tuple[float, float, float]] = []  # (x, y, radius)

    if spec.cabinet is not None:
        placed.append((spec.cabinet.x, spec.cabinet.y, float(np.hypot(*spec.cabinet.body_half[:2]))))

    for obj in spec.objects:
        pl = spec.placements.get(obj.name)
        if pl is None:
            poses[obj.name] = Pose.identity()
            continue
        if pl.fixed is not None:
            poses[obj.name] = pl.fixed
            if not obj.static:
                placed.append((pl.fixed.position[0], pl.fixed.position[1], obj.bounding_radius()))
            continue
        if spec.held_object == obj.name:
            continue  # pose derived from the gripper below
        x0, x1, y0, y1 = pl.region
        r = obj.bounding_radius() + (obj.rest_half_height(sideways=False) if pl.sideways else 0.0)
        for attempt in range(max_attempts + 1):
            if attempt == max_attempts:
                raise PlacementFailure(f"could not place {obj.name} after {max_attempts} attempts")
            x = rng.uniform(x0, x1)
            y = rng.uniform(y0, y1)
            if all(np.hypot(x - px, y - py) >= r + pr + 0.012 for px, py, pr in placed):
                break
        yaw = rng.uniform(0, 2 * np.pi) if pl.yaw_random else 0.0
        if pl.sideways:
            z = obj.parts[0].size[0]  # resting on the cylinder side
            pose = Pose.from_euler((x, y, z), yaw, 0.0, np.pi / 2)
        else:
            pose = Pose.from_euler((x, y, obj.rest_half_height()), yaw, 0.0, 0.0)
        poses[obj.name] = pose
        placed.append((x, y, r))

    state = WorldState(
        object_poses=poses,
        drawer_ext=np.asarray(spec.initial_drawer_ext, dtype=np.float64).copy(),
        gripper=spec.gripper_home,
        gripper_open=spec.held_object is None,
    )
    if spec.held_object is not None:
        obj = spec.object(spec.held_object)
        # hang the object at the tool point, upright in the world frame
        rel_q = quat_multiply(quat_conjugate(state.gripper.orientation), np.array([1.0, 0, 0, 0]))
        state.held = ("object", spec.held_object, Pose((0.0, 0.0, 0.0), rel_q))
        state.gripper_open = False
        _sync_held_object(state)
    return state


# ---------------------------------------------------------------------------
# Rendering / observation


def cabinet_primitives(cab: CabinetSpec, drawer_ext, obj_id: int) -> list[RenderPrim]:
    prims = [
        RenderPrim(
            "box",
            Pose((cab.x, cab.y, cab.body_half[2]), np.array([1.0, 0, 0, 0])),
            cab.body_half,
            cab.body_color,
            obj_id,
            "body",
        )
    ]
    for j in range(cab.n_drawers):
        e = float(drawer_ext[j])
        front = cab.drawer_front_center(j, e)
        prims.append(
            RenderPrim(
                "box",
                Pose(front, np.array([1.0, 0, 0, 0])),
                cab.drawer_half,
                cab.drawer_color,
                obj_id,
                f"drawer:{j}",
            )
        )
        handle = cab.handle_center(j, e)
        prims.append(
            RenderPrim(
                "box",
                Pose(handle, np.array([1.0, 0, 0, 0])),
                cab.handle_half,
                cab.handle_color,
                obj_id,
                f"handle:{j}",
            )
        )
    return prims


def scene_primitives(spec: SceneSpec, state: WorldState) -> list[RenderPrim]:
    prims: list[RenderPrim] = []
    for i, obj in enumerate(spec.objects):
        pose = state.object_poses.get(obj.name)
        if pose is None:
            continue
        for k, part in enumerate(obj.parts):
            world = Pose(pose.transform(np.asarray(part.offset)), pose.orientation)
            prims.append(RenderPrim(part.kind, world, part.size, part.color, i, f"part:{k}"))
    if spec.cabinet is not None:
        prims.extend(cabinet_primitives(spec.cabinet, state.drawer_ext, len(spec.objects)))
    return prims


CABINET_ID_NAME = "cabinet"


def object_id(spec: SceneSpec, name: str) -> int:
    if name == CABINET_ID_NAME:
        return len(spec.objects)
    return spec.object_index(name)


@dataclass
class Observation:
    """One multi-camera snapshot: grounding image + fused colored cloud."""

    image: np.ndarray  # (H, W, 3) uint8, grounding camera
    depths: list  # per-camera (H, W) float depth, 0 = hole
    cloud: np.ndarray  # (D, 6) xyz + rgb
    prim_index: np.ndarray  # (H, W) int, grounding camera, -1 = background
    prims: list  # RenderPrim list used for this frame

    @property
    def depth(self) -> np.ndarray:
        return self.depths[0]


def observe(state: WorldState, spec: SceneSpec) -> Observation:
    prims = scene_primitives(spec, state)
    images, depths, prim_idx = [], [], None
    clouds = []
    for ci, cam in enumerate(spec.cameras):
        rgb, depth, idx = render_camera(prims, cam.intrinsics, cam.extrinsics)
        images.append(rgb)
        depths.append(depth)
        if ci == spec.grounding_cam:
            prim_idx = idx
        pts, valid = _deproject_colored(depth, rgb, cam)
        clouds.append(pts)
    cloud = np.concatenate(clouds, axis=0) if clouds else np.zeros((0, 6))
    (x0, x1), (y0, y1), (z0, z1) = spec.workspace
    if cloud.shape[0]:
        keep = (
            (cloud[:, 0] >= x0) & (cloud[:, 0] <= x1)
            & (cloud[:, 1] >= y0) & (cloud[:, 1] <= y1)
            & (cloud[:, 2] >= z0) & (cloud[:, 2] <= z1)
        )
        cloud = cloud[keep]
    gimg = np.clip(np.round(images[spec.grounding_cam] * 255.0), 0, 255).astype(np.uint8)
    # reorder depths so index 0 is the grounding camera
    order = [spec.grounding_cam] + [i for i in range(len(spec.cameras)) if i != spec.grounding_cam]
    return Observation(
        image=gimg,
        depths=[depths[i] for i in order],
        cloud=cloud,
        prim_index=prim_idx,
        prims=prims,
    )


def _deproject_colored(depth, rgb, cam):
    from ..geometry import deproject_grid

    pts, valid = deproject_grid(depth, cam.intrinsics, cam.extrinsics)
    colors = rgb[valid]
    return np.concatenate([pts, colors], axis=1), valid


# ---------------------------------------------------------------------------
# Anchors and ground-truth keypoints


def anchor_world(spec: SceneSpec, state: WorldState, target: tuple) -> tuple[np.ndarray, int]:
    """Resolve a task target to a world point and owning render object id.

    Targets: ("object", name, anchor_name) or ("drawer", index).
    """
    if target[0] == "object":
        _, name, anchor = target
        obj = spec.object(name)
        pt = state.object_poses[name].transform(np.asarray(obj.anchors[anchor]))
        return pt, object_id(spec, name)
    if target[0] == "drawer":
        j = target[1]
        pt = spec.cabinet.handle_center(j, float(state.drawer_ext[j]))
        return pt, object_id(spec, CABINET_ID_NAME)
    raise ValueError(f"unknown target {target!r}")


def ground_truth_keypoint(
    state: WorldState, spec: SceneSpec, target: tuple, obs: Observation | None = None
) -> tuple[int, int]:
    """Project the target anchor into the grounding camera; Occluded if hidden.

    Visibility: the pixel's surface belongs to the target object, or the
    rendered depth is not in front of the anchor by more than a tolerance.
    """
    cam = spec.cameras[spec.grounding_cam]
    point, owner = anchor_world(spec, state, target)
    u, v, z = project(point, cam.intrinsics, cam.extrinsics)
    ui, vi = int(round(u)), int(round(v))
    if not (0 <= ui < cam.intrinsics.width and 0 <= vi < cam.intrinsics.height):
        raise Occluded(f"target projects outside the image at ({u:.1f}, {v:.1f})")
    if obs is None:
        obs = observe(state, spec)
    idx = int(obs.prim_index[vi, ui])
    if idx >= 0 and obs.prims[idx].obj_id == owner:
        return ui, vi
    rendered = float(obs.depth[vi, ui])
    if rendered > 0 and rendered >= z - OCCLUSION_DEPTH_TOL_M:
        return ui, vi
    raise Occluded(f"target anchor hidden at pixel ({ui}, {vi})")


# ---------------------------------------------------------------------------
# Execution


def _graspable_anchors(spec: SceneSpec, state: WorldState):
    """(name, anchor, world point) for every graspable anchor in the scene."""
    out = []
    for obj in spec.objects:
        if obj.static or obj.name not in state.object_poses:
            continue
        pose = state.object_poses[obj.name]
        for a in obj.graspable:
            out.append((obj.name, a, pose.transform(np.asarray(obj.anchors[a]))))
    return out


def _drawer_push(spec: SceneSpec, state: WorldState):
    """Contact pushing: a gripper at the handle forces the drawer inward."""
    cab = spec.cabinet
    if cab is None:
        return
    g = state.gripper.position
    for j in range(cab.n_drawers):
        if state.held == ("drawer", j):
            continue
        h = cab.handle_center(j, float(state.drawer_ext[j]))
        if np.linalg.norm(g - h) < HANDLE_CONTACT_M:
            closed_x = cab.handle_center(j, 0.0)[0]
            implied = (closed_x - g[0]) / cab.travel
            state.drawer_ext[j] = float(np.clip(min(state.drawer_ext[j], implied), 0.0, 1.0))


def _drawer_follow(spec: SceneSpec, state: WorldState):
    if not (state.held and state.held[0] == "drawer"):
        return
    j = state.held[1]
    cab = spec.cabinet
    closed_x = cab.handle_center(j, 0.0)[0]
    state.drawer_ext[j] = float(np.clip((closed_x - state.gripper.position[0]) / cab.travel, 0.0, 1.0))


def support_height(spec: SceneSpec, state: WorldState, falling: str, xy) -> float:
    """World z of the highest support surface under (x, y)."""
    z = 0.0  # table top
    for obj in spec.objects:
        if obj.name == falling or obj.name not in state.object_poses:
            continue
        pose = state.object_poses[obj.name]
        for c in obj.containers.values():
            center = pose.transform(np.array([c.center[0], c.center[1], 0.0]))
            if np.hypot(xy[0] - center[0], xy[1] - center[1]) <= c.radius:
                z = max(z, pose.position[2] + c.floor_z)
    return z


def _release(spec: SceneSpec, state: WorldState):
    if state.held is None:
        return
    if state.held[0] == "object":
        _, name, _ = state.held
        pose = state.object_poses[name]
        obj = spec.object(name)
        support = support_height(spec, state, name, pose.position[:2])
        upright = abs(rotate_vec(pose.orientation, np.array([0, 0, 1.0]))[2]) > 0.8
        half = obj.rest_half_height(sideways=not upright)
        state.object_poses[name] = Pose(
            (pose.position[0], pose.position[1], support + half), pose.orientation
        )
    state.held = None


def _grasp(spec: SceneSpec, state: WorldState):
    if state.held is not None:
        return
    g = state.gripper.position
    best = None
    for name, anchor, point in _graspable_anchors(spec, state):
        d = float(np.linalg.norm(point - g))
        if d < GRASP_RADIUS_M and (best is None or d < best[0]):
            best = (d, "object", name)
    cab = spec.cabinet
    if cab is not None:
        for j in range(cab.n_drawers):
            h = cab.handle_center(j, float(state.drawer_ext[j]))
            d = float(np.linalg.norm(h - g))
            if d < GRASP_RADIUS_M and (best is None or d < best[0]):
                best = (d, "drawer", j)
    if best is None:
        return
    if best[1] == "object":
        name = best[2]
        rel = state.gripper.inverse().compose(state.object_poses[name])
        state.held = ("object", name, rel)
    else:
        state.held = ("drawer", best[2])


def apply_trajectory(state: WorldState, traj: Trajectory, spec: SceneSpec) -> WorldState:
    """Execute setpoints kinematically; returns the new state (input unchanged)."""
    s = state.copy()
    for pose, cmd in traj.setpoints:
        start = s.gripper.position
        dist = float(np.linalg.norm(pose.position - start))
        n = max(1, int(np.ceil(dist / MICRO_STEP_M)))
        for i in range(1, n + 1):
            t = i / n
            p = Pose((1 - t) * start + t * pose.position, pose.orientation)
            s.gripper = p
            _drawer_follow(spec, s)
            _drawer_push(spec, s)
            _sync_held_object(s)
        s.gripper = pose
        _sync_held_object(s)
        if cmd == "close":
            if s.gripper_open:
                _grasp(spec, s)
            s.gripper_open = False
        elif cmd == "open":
            _release(spec, s)
            s.gripper_open = True
    return s


# ---------------------------------------------------------------------------
# Success predicates


def check_success(state: WorldState, task, spec: SceneSpec) -> bool:
    p = task.success_params
    skill = task.skill
    if skill == "pick":
        name = p["object"]
        return state.held_object_name() == name and (
            state.object_poses[name].position[2] - p["start_z"] >= 0.04
        )
    if skill == "place":
        name = p["object"]
        if state.held_object_name() == name:
            return False
        dest = np.asarray(p["rest_point"])
        return float(np.linalg.norm(state.object_poses[name].position - dest)) <= 0.03
    if skill == "open":
        return float(state.drawer_ext[p["drawer"]]) >= 0.7
    if skill == "close":
        return float(state.drawer_ext[p["drawer"]]) <= 0.1
    if skill == "reorient_mug":
        axis = rotate_vec(state.object_poses[p["object"]].orientation, np.array([0, 0, 1.0]))
        return float(axis[2]) >= np.cos(np.deg2rad(15.0))
    if skill in ("pour_cup", "refill_keurig"):
        goal = Pose.from_list(p["commanded_pose"])
        pos_ok = float(np.linalg.norm(state.gripper.position - goal.position)) <= 0.03
        ang_ok = geodesic_angle(state.gripper.orientation, goal.orientation) <= np.deg2rad(10.0)
        return pos_ok and ang_ok
    if skill == "load_pod":
        pod_pose = state.object_poses[p["object"]]
        slot = np.asarray(p["slot_center"])
        xy_ok = float(np.hypot(*(pod_pose.position[:2] - slot[:2]))) <= 0.01
        below_rim = pod_pose.position[2] + p["pod_half_height"] <= p["rim_z"] + 1e-9
        return (not state.held_object_name()) and xy_ok and below_rim
    raise ValueError(f"no success predicate for skill {skill!r}")


# ---------------------------------------------------------------------------
# Debug exports


def write_png(path, image_u8: np.ndarray):
    cv2.imwrite(str(path), cv2.cvtColor(image_u8, cv2.COLOR_RGB2BGR))


def write_pfm(path, depth: np.ndarray):
    """Grayscale PFM, little-endian, top row first (negative scale)."""
    h, w = depth.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(depth[::-1].astype("<f4").tobytes())
