"""Per-pixel ray casting of scene primitives (the depth-buffered renderer).

Rays are parameterized so that the hit parameter t equals camera-frame depth
(direction z-component is 1 in the camera frame). Pixels that hit nothing
get depth 0, mirroring an RGB-D sensor's missing-depth encoding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import CameraExtrinsics, CameraIntrinsics, Pose, quat_to_matrix

_EPS = 1e-9


@dataclass(frozen=True)
class RenderPrim:
    kind: str
    pose: Pose  # world pose of the primitive
    size: tuple
    color: tuple
    obj_id: int
    tag: str = ""


def pixel_rays(intr: CameraIntrinsics, extr: CameraExtrinsics):
    """World-frame ray origin and per-pixel directions with unit camera-z."""
    us, vs = np.meshgrid(np.arange(intr.width), np.arange(intr.height))
    d_cam = np.stack(
        [(us - intr.cx) / intr.fx, (vs - intr.cy) / intr.fy, np.ones_like(us, dtype=np.float64)],
        axis=-1,
    ).reshape(-1, 3)
    r = quat_to_matrix(extr.pose.orientation)
    return extr.pose.position, d_cam @ r.T


def _safe_div(num, den):
    den = np.where(np.abs(den) < 1e-300, np.where(den >= 0, 1e-300, -1e-300), den)
    return num / den


def intersect_sphere(origin, dirs, center, radius):
    oc = origin - center
    a = (dirs * dirs).sum(axis=1)
    b = 2.0 * dirs @ oc
    c = oc @ oc - radius * radius
    disc = b * b - 4.0 * a * c
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t = (-b - sq) / (2.0 * a)
    return np.where(ok & (t > _EPS), t, np.inf)


def _to_local(origin, dirs, pose: Pose):
    r = quat_to_matrix(pose.orientation)
    ol = (origin - pose.position) @ r
    dl = dirs @ r
    return ol, dl


def intersect_box(origin, dirs, pose: Pose, half):
    ol, dl = _to_local(origin, dirs, pose)
    h = np.asarray(half)
    t1 = _safe_div(-h - ol, dl)
    t2 = _safe_div(h - ol, dl)
    tlo = np.minimum(t1, t2).max(axis=1)
    thi = np.maximum(t1, t2).min(axis=1)
    hit = (thi >= tlo) & (tlo > _EPS)
    return np.where(hit, tlo, np.inf)


def intersect_cylinder(origin, dirs, pose: Pose, radius, half_height):
    ol, dl = _to_local(origin, dirs, pose)
    a = dl[:, 0] ** 2 + dl[:, 1] ** 2
    b = 2.0 * (ol[0] * dl[:, 0] + ol[1] * dl[:, 1])
    c = ol[0] ** 2 + ol[1] ** 2 - radius * radius
    disc = b * b - 4.0 * a * c
    ok = (disc >= 0) & (a > 1e-16)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    a_safe = np.where(a > 1e-16, a, 1.0)
    t_side = (-b - sq) / (2.0 * a_safe)
    z_side = ol[2] + t_side * dl[:, 2]
    t_side = np.where(ok & (t_side > _EPS) & (np.abs(z_side) <= half_height), t_side, np.inf)

    best = t_side
    for zc in (half_height, -half_height):
        t_cap = _safe_div(zc - ol[2], dl[:, 2])
        x = ol[0] + t_cap * dl[:, 0]
        y = ol[1] + t_cap * dl[:, 1]
        good = (t_cap > _EPS) & (x * x + y * y <= radius * radius)
        best = np.where(good & (t_cap < best), t_cap, best)
    return best


def intersect(prim: RenderPrim, origin, dirs):
    if prim.kind == "sphere":
        return intersect_sphere(origin, dirs, prim.pose.position, prim.size[0])
    if prim.kind == "box":
        return intersect_box(origin, dirs, prim.pose, prim.size)
    if prim.kind == "cylinder":
        return intersect_cylinder(origin, dirs, prim.pose, prim.size[0], prim.size[1])
    raise ValueError(f"unknown primitive kind {prim.kind!r}")


def render_camera(prims: list[RenderPrim], intr: CameraIntrinsics, extr: CameraExtrinsics):
    """Returns (rgb float (H,W,3) in [0,1], depth (H,W), prim index (H,W) or -1)."""
    origin, dirs = pixel_rays(intr, extr)
    n = dirs.shape[0]
    t_buf = np.full(n, np.inf)
    idx_buf = np.full(n, -1, dtype=np.int32)
    for i, prim in enumerate(prims):
        t = intersect(prim, origin, dirs)
        closer = t < t_buf
        t_buf[closer] = t[closer]
        idx_buf[closer] = i
    rgb = np.zeros((n, 3))
    if prims:
        colors = np.array([p.color for p in prims])
        hit = idx_buf >= 0
        rgb[hit] = colors[idx_buf[hit]]
    depth = np.where(np.isfinite(t_buf), t_buf, 0.0)
    shape = (intr.height, intr.width)
    return rgb.reshape(*shape, 3), depth.reshape(shape), idx_buf.reshape(shape)
