"""Scene specification: parameterized objects, the drawer cabinet, cameras.

The robot frame has x pointing away from the robot across the table, y left,
z up; the table top is z = 0. The cabinet sits at the far edge and its
drawers slide toward the robot (-x). All sizes are half-extents in meters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..geometry import CameraExtrinsics, CameraIntrinsics, Pose


@dataclass(frozen=True)
class ShapeSpec:
    """One render primitive in an object's local frame."""

    kind: str  # "box" | "sphere" | "cylinder"
    size: tuple  # box: (hx, hy, hz); sphere: (r,); cylinder: (r, half_height)
    color: tuple
    offset: tuple = (0.0, 0.0, 0.0)  # local translation (no local rotation needed)

    def max_xy_extent(self) -> float:
        if self.kind == "sphere":
            ext = self.size[0]
        elif self.kind == "cylinder":
            ext = self.size[0]
        else:
            ext = float(np.hypot(self.size[0], self.size[1]))
        return float(np.hypot(self.offset[0], self.offset[1])) + ext


@dataclass(frozen=True)
class ContainerSpec:
    """Circular support region (local frame) that dropped objects rest in."""

    center: tuple  # local (x, y)
    radius: float
    floor_z: float  # local z of the support surface
    rim_z: float  # local z below which a resting object counts as inside


@dataclass
class ObjectSpec:
    name: str
    parts: list[ShapeSpec]
    anchors: dict[str, tuple] = field(default_factory=dict)  # local points
    graspable: tuple = ()  # anchor names a close command can attach to
    static: bool = False
    containers: dict[str, ContainerSpec] = field(default_factory=dict)
    color_name: str = ""

    def bounding_radius(self) -> float:
        return max(p.max_xy_extent() for p in self.parts) + 0.004

    def rest_half_height(self, sideways: bool = False) -> float:
        """Half-height of the object when resting (upright unless sideways)."""
        top = 0.0
        for p in self.parts:
            if p.kind == "sphere":
                ext = p.size[0]
            elif p.kind == "cylinder":
                ext = p.size[0] if sideways else p.size[1]
            else:
                ext = p.size[2]
            top = max(top, abs(p.offset[2]) + ext)
        return top


@dataclass(frozen=True)
class CabinetSpec:
    """Three-drawer cabinet; drawers indexed 0 (bottom) to 2 (top)."""

    x: float
    y: float
    body_half: tuple = (0.05, 0.11, 0.105)
    drawer_half: tuple = (0.008, 0.092, 0.026)
    handle_half: tuple = (0.015, 0.022, 0.007)
    drawer_z: tuple = (0.045, 0.105, 0.165)
    travel: float = 0.05
    body_color: tuple = (0.42, 0.40, 0.38)
    drawer_color: tuple = (0.55, 0.52, 0.48)
    handle_color: tuple = (0.16, 0.16, 0.18)

    @property
    def n_drawers(self) -> int:
        return len(self.drawer_z)

    def front_face_x(self, extension: float) -> float:
        """World x of a drawer front panel's outer face."""
        return self.x - self.body_half[0] - 2 * self.drawer_half[0] - extension * self.travel

    def drawer_front_center(self, j: int, extension: float) -> np.ndarray:
        x = self.front_face_x(extension) + self.drawer_half[0]
        return np.array([x, self.y, self.drawer_z[j]])

    def handle_center(self, j: int, extension: float) -> np.ndarray:
        x = self.front_face_x(extension) - self.handle_half[0]
        return np.array([x, self.y, self.drawer_z[j]])


@dataclass(frozen=True)
class CameraSpec:
    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics


@dataclass
class Placement:
    """How reset() poses one object."""

    fixed: Pose | None = None
    region: tuple | None = None  # (x0, x1, y0, y1); z from rest height
    yaw_random: bool = False
    sideways: bool = False  # lie on the side (roll 90 degrees)


@dataclass
class SceneSpec:
    objects: list[ObjectSpec]
    placements: dict[str, Placement]
    cameras: list[CameraSpec]
    cabinet: CabinetSpec | None = None
    grounding_cam: int = 0
    workspace: tuple = ((0.22, 0.80), (-0.34, 0.34), (-0.005, 0.45))
    table_extent: tuple = ((0.24, 0.78), (-0.32, 0.32))
    seed: int = 0
    initial_drawer_ext: tuple = (0.0, 0.0, 0.0)
    held_object: str | None = None
    gripper_home: Pose = field(
        default_factory=lambda: Pose.from_euler((0.42, 0.0, 0.30), 0.0, np.pi, 0.0)
    )

    def object(self, name: str) -> ObjectSpec:
        for o in self.objects:
            if o.name == name:
                return o
        raise KeyError(name)

    def object_index(self, name: str) -> int:
        for i, o in enumerate(self.objects):
            if o.name == name:
                return i
        raise KeyError(name)


RESOLUTION = (160, 120)  # (W, H)


def default_cameras() -> list[CameraSpec]:
    intr = CameraIntrinsics(fx=140.0, fy=140.0, cx=79.5, cy=59.5, width=160, height=120)
    ground = CameraSpec(intr, CameraExtrinsics.look_at((0.10, 0.0, 0.46), (0.54, 0.0, 0.04)))
    side = CameraSpec(intr, CameraExtrinsics.look_at((0.46, -0.50, 0.38), (0.52, 0.0, 0.06)))
    return [ground, side]


# ---------------------------------------------------------------------------
# Object catalog


def table() -> ObjectSpec:
    return ObjectSpec(
        name="table",
        parts=[ShapeSpec("box", (0.30, 0.34, 0.015), (0.74, 0.71, 0.66), (0.0, 0.0, -0.015))],
        static=True,
    )


def lemon() -> ObjectSpec:
    return ObjectSpec(
        "lemon",
        [ShapeSpec("sphere", (0.024,), (0.93, 0.84, 0.07))],
        anchors={"grasp": (0.0, 0.0, 0.0)},
        graspable=("grasp",),
        color_name="yellow",
    )


def lime() -> ObjectSpec:
    return ObjectSpec(
        "lime",
        [ShapeSpec("sphere", (0.021,), (0.38, 0.72, 0.14))],
        anchors={"grasp": (0.0, 0.0, 0.0)},
        graspable=("grasp",),
        color_name="green",
    )


def lego() -> ObjectSpec:
    return ObjectSpec(
        "lego",
        [ShapeSpec("box", (0.016, 0.016, 0.016), (0.86, 0.09, 0.09))],
        anchors={"grasp": (0.0, 0.0, 0.0)},
        graspable=("grasp",),
        color_name="red",
    )


def marker() -> ObjectSpec:
    return ObjectSpec(
        "marker",
        [ShapeSpec("box", (0.036, 0.009, 0.009), (0.55, 0.12, 0.76))],
        anchors={"grasp": (0.0, 0.0, 0.0)},
        graspable=("grasp",),
        color_name="purple",
    )


def screwdriver() -> ObjectSpec:
    return ObjectSpec(
        "screwdriver",
        [ShapeSpec("box", (0.046, 0.011, 0.011), (0.95, 0.47, 0.06))],
        anchors={"grasp": (0.0, 0.0, 0.0)},
        graspable=("grasp",),
        color_name="orange",
    )


def bowl() -> ObjectSpec:
    return ObjectSpec(
        "bowl",
        [ShapeSpec("cylinder", (0.055, 0.021), (0.12, 0.32, 0.90))],
        anchors={"grasp": (0.0, 0.0, 0.0), "interior": (0.0, 0.0, 0.021)},
        graspable=("grasp",),
        containers={"interior": ContainerSpec((0.0, 0.0), 0.052, 0.021, 0.021)},
        color_name="blue",
    )


def plate() -> ObjectSpec:
    return ObjectSpec(
        "plate",
        [ShapeSpec("cylinder", (0.050, 0.008), (0.93, 0.93, 0.96))],
        anchors={"grasp": (0.0, 0.0, 0.0), "interior": (0.0, 0.0, 0.008)},
        graspable=("grasp",),
        containers={"interior": ContainerSpec((0.0, 0.0), 0.048, 0.008, 0.008)},
        color_name="white",
    )


def mug() -> ObjectSpec:
    return ObjectSpec(
        "mug",
        [
            ShapeSpec("cylinder", (0.032, 0.042), (0.05, 0.74, 0.80)),
            ShapeSpec("box", (0.007, 0.018, 0.012), (0.05, 0.74, 0.80), (0.039, 0.0, 0.0)),
        ],
        anchors={"grasp": (0.0, 0.0, 0.0), "opening": (0.0, 0.0, 0.042)},
        graspable=("grasp",),
        containers={"opening": ContainerSpec((0.0, 0.0), 0.030, 0.042, 0.042)},
        color_name="cyan",
    )


def cup() -> ObjectSpec:
    return ObjectSpec(
        "cup",
        [ShapeSpec("cylinder", (0.030, 0.045), (0.92, 0.91, 0.88))],
        anchors={"grasp": (0.0, 0.0, 0.0), "opening": (0.0, 0.0, 0.045)},
        graspable=("grasp",),
        containers={"opening": ContainerSpec((0.0, 0.0), 0.028, 0.045, 0.045)},
        color_name="white",
    )


def pitcher() -> ObjectSpec:
    return ObjectSpec(
        "pitcher",
        [ShapeSpec("box", (0.032, 0.040, 0.055), (0.84, 0.12, 0.58))],
        anchors={"grasp": (0.0, 0.0, 0.0)},
        graspable=("grasp",),
        color_name="magenta",
    )


KEURIG_SLOT_LOCAL = (-0.018, 0.0, 0.154)
KEURIG_REFILL_LOCAL = (0.0, 0.077, 0.146)


def keurig() -> ObjectSpec:
    slot_top = KEURIG_SLOT_LOCAL[2] + 0.004
    return ObjectSpec(
        "keurig",
        [
            ShapeSpec("box", (0.055, 0.055, 0.075), (0.24, 0.24, 0.27), (0.0, 0.0, 0.075)),
            ShapeSpec("cylinder", (0.021, 0.004), (0.09, 0.09, 0.11), KEURIG_SLOT_LOCAL),
            ShapeSpec("box", (0.024, 0.022, 0.010), (0.38, 0.55, 0.86), KEURIG_REFILL_LOCAL),
        ],
        anchors={
            "slot": (KEURIG_SLOT_LOCAL[0], KEURIG_SLOT_LOCAL[1], slot_top),
            "refill": (KEURIG_REFILL_LOCAL[0], KEURIG_REFILL_LOCAL[1], KEURIG_REFILL_LOCAL[2] + 0.010),
        },
        static=True,
        containers={
            "slot": ContainerSpec(
                (KEURIG_SLOT_LOCAL[0], KEURIG_SLOT_LOCAL[1]), 0.020, slot_top, slot_top + 0.020
            )
        },
        color_name="gray",
    )


POD_COLORS = {
    "red": (0.80, 0.12, 0.12),
    "blue": (0.16, 0.32, 0.84),
    "green": (0.10, 0.62, 0.22),
    "brown": (0.46, 0.31, 0.16),
}


def pod(color: str = "brown") -> ObjectSpec:
    return ObjectSpec(
        "pod",
        [ShapeSpec("cylinder", (0.015, 0.009), POD_COLORS[color])],
        anchors={"grasp": (0.0, 0.0, 0.0)},
        graspable=("grasp",),
        color_name=color,
    )


CATALOG = {
    "lemon": lemon,
    "lime": lime,
    "lego": lego,
    "marker": marker,
    "screwdriver": screwdriver,
    "bowl": bowl,
    "plate": plate,
    "mug": mug,
    "cup": cup,
    "pitcher": pitcher,
    "keurig": keurig,
}

PICKABLE = ("lemon", "lime", "lego", "marker", "screwdriver")
DESTINATIONS = ("bowl", "plate")


# ---------------------------------------------------------------------------
# JSON round-trip (external scene files)


def scene_to_jsonable(spec: SceneSpec) -> dict:
    def shape(s: ShapeSpec):
        return {"kind": s.kind, "size": list(s.size), "color": list(s.color), "offset": list(s.offset)}

    def obj(o: ObjectSpec):
        return {
            "name": o.name,
            "parts": [shape(p) for p in o.parts],
            "anchors": {k: list(v) for k, v in o.anchors.items()},
            "graspable": list(o.graspable),
            "static": o.static,
            "containers": {
                k: {"center": list(c.center), "radius": c.radius, "floor_z": c.floor_z, "rim_z": c.rim_z}
                for k, c in o.containers.items()
            },
            "color_name": o.color_name,
        }

    def cam(c: CameraSpec):
        i = c.intrinsics
        return {
            "intrinsics": {"fx": i.fx, "fy": i.fy, "cx": i.cx, "cy": i.cy, "width": i.width, "height": i.height},
            "pose": c.extrinsics.pose.to_list(),
        }

    def placement(p: Placement):
        return {
            "fixed": p.fixed.to_list() if p.fixed else None,
            "region": list(p.region) if p.region else None,
            "yaw_random": p.yaw_random,
            "sideways": p.sideways,
        }

    return {
        "objects": [obj(o) for o in spec.objects],
        "placements": {k: placement(v) for k, v in spec.placements.items()},
        "cameras": [cam(c) for c in spec.cameras],
        "cabinet": None
        if spec.cabinet is None
        else {"x": spec.cabinet.x, "y": spec.cabinet.y},
        "grounding_cam": spec.grounding_cam,
        "seed": spec.seed,
        "initial_drawer_ext": list(spec.initial_drawer_ext),
        "held_object": spec.held_object,
        "gripper_home": spec.gripper_home.to_list(),
    }


def scene_from_jsonable(obj: dict) -> SceneSpec:
    objects = [
        ObjectSpec(
            name=o["name"],
            parts=[ShapeSpec(p["kind"], tuple(p["size"]), tuple(p["color"]), tuple(p["offset"])) for p in o["parts"]],
            anchors={k: tuple(v) for k, v in o["anchors"].items()},
            graspable=tuple(o["graspable"]),
            static=o["static"],
            containers={
                k: ContainerSpec(tuple(c["center"]), c["radius"], c["floor_z"], c["rim_z"])
                for k, c in o["containers"].items()
            },
            color_name=o.get("color_name", ""),
        )
        for o in obj["objects"]
    ]
    cameras = [
        CameraSpec(
            CameraIntrinsics(**c["intrinsics"]),
            CameraExtrinsics(Pose.from_list(c["pose"])),
        )
        for c in obj["cameras"]
    ]
    placements = {
        k: Placement(
            fixed=Pose.from_list(p["fixed"]) if p["fixed"] else None,
            region=tuple(p["region"]) if p["region"] else None,
            yaw_random=p["yaw_random"],
            sideways=p["sideways"],
        )
        for k, p in obj["placements"].items()
    }
    return SceneSpec(
        objects=objects,
        placements=placements,
        cameras=cameras,
        cabinet=None if obj["cabinet"] is None else CabinetSpec(x=obj["cabinet"]["x"], y=obj["cabinet"]["y"]),
        grounding_cam=obj["grounding_cam"],
        seed=obj["seed"],
        initial_drawer_ext=tuple(obj["initial_drawer_ext"]),
        held_object=obj["held_object"],
        gripper_home=Pose.from_list(obj["gripper_home"]),
    )


def save_scene(spec: SceneSpec, path):
    Path(path).write_text(json.dumps(scene_to_jsonable(spec), indent=2, sort_keys=True))


def load_scene(path) -> SceneSpec:
    return scene_from_jsonable(json.loads(Path(path).read_text()))
