"""Crop-row RGB-D reconstruction into primitive collision scenes, and grasp planning within them."""

from .cloud import CameraIntrinsics, PointCloud, RGBDFrame, deproject, foreground_mask
from .geometry import RigidTransform
from .kinematics import KinematicChain, fk, ik_dls, jacobian, reference_arm
from .planner import PlannerConfig, plan, run_scenario, sample_goal_configs, validate_path
from .primitives import ExtractionParams, extract_primitives, fit_cylinder_ransac, fit_sphere_ransac
from .reconstruction import PipelineConfig, register_pair, register_sequence
from .registration import IcpParams, icp, silhouette_shift
from .scene import CapsulePrimitive, PrimitiveScene, SpherePrimitive, check_collision

__version__ = "0.1.0"
