"""Multi-view disambiguation of planar marker poses and marker-based mapping."""
from .averaging import (
    AveragingConfig,
    AveragingResult,
    clique_constrained_objective,
    exhaustive_solve,
    irls_multigraph_averaging,
    lifted_gradient,
    lifted_objective,
    sigmoid,
    solve_lifted,
)
from .exceptions import AmbigraphError
from .geometry import CameraIntrinsics, RigidPose, angular_difference_deg, chordal_distance
from .harness import SceneConfig, generate_scene, precision, run_baseline
from .multigraph import AmbiguityMultigraph, build_multigraph, spanning_tree_init
from .ppe import AmbiguousDetection, MarkerSpec, ppe_solve, synth_detection
from .selection import disambiguate, solve_mwc
from .sfm import MarkerMap, bundle_adjust, camera_init_single_pose_averaging, marker_pose_graph_init, reconstruct

__version__ = "0.1.0"

__all__ = [
    "AmbigraphError",
    "AmbiguityMultigraph",
    "AmbiguousDetection",
    "AveragingConfig",
    "AveragingResult",
    "CameraIntrinsics",
    "MarkerMap",
    "MarkerSpec",
    "RigidPose",
    "SceneConfig",
    "angular_difference_deg",
    "build_multigraph",
    "bundle_adjust",
    "camera_init_single_pose_averaging",
    "chordal_distance",
    "clique_constrained_objective",
    "disambiguate",
    "exhaustive_solve",
    "generate_scene",
    "irls_multigraph_averaging",
    "lifted_gradient",
    "lifted_objective",
    "marker_pose_graph_init",
    "ppe_solve",
    "precision",
    "reconstruct",
    "run_baseline",
    "sigmoid",
    "solve_lifted",
    "solve_mwc",
    "spanning_tree_init",
    "synth_detection",
]
