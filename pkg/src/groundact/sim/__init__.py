"""Desk-scale kinematic tabletop simulator."""

from .scene import (
    CabinetSpec,
    CameraSpec,
    ContainerSpec,
    ObjectSpec,
    Placement,
    SceneSpec,
    ShapeSpec,
    default_cameras,
    load_scene,
    save_scene,
)
from .tasks import (
    Demonstration,
    InfeasibleTask,
    TaskSpec,
    generate_demo,
    generate_demos,
    generate_supplemental,
    make_episode,
    sample_instruction,
    scripted_demo,
    scripted_waypoints,
)
from .world import (
    Observation,
    Occluded,
    PlacementFailure,
    WorldState,
    anchor_world,
    apply_trajectory,
    check_success,
    ground_truth_keypoint,
    object_id,
    observe,
    reset,
    scene_primitives,
    support_height,
    write_pfm,
    write_png,
)

__all__ = [
    "CabinetSpec",
    "CameraSpec",
    "ContainerSpec",
    "Demonstration",
    "InfeasibleTask",
    "ObjectSpec",
    "Observation",
    "Occluded",
    "Placement",
    "PlacementFailure",
    "SceneSpec",
    "ShapeSpec",
    "TaskSpec",
    "WorldState",
    "anchor_world",
    "apply_trajectory",
    "check_success",
    "default_cameras",
    "generate_demo",
    "generate_demos",
    "generate_supplemental",
    "ground_truth_keypoint",
    "load_scene",
    "make_episode",
    "object_id",
    "observe",
    "reset",
    "sample_instruction",
    "save_scene",
    "scene_primitives",
    "scripted_demo",
    "scripted_waypoints",
    "support_height",
    "write_pfm",
    "write_png",
]
