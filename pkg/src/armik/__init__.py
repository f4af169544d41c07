"""Learned inverse kinematics for families of rotational-joint manipulators.

The package covers the full pipeline: forward-kinematics ground truth,
collision-free dataset generation, graph construction, a small dense-network
stack with reverse-mode autodiff, message-passing training, and error
analysis. Everything is seed-deterministic.
"""

__version__ = "0.1.0"

from .kinematics import (
    CollisionVerdict,
    DHJoint,
    ManipulatorConfig,
    Pose,
    check_collision,
    dh_matrix,
    euler_from_rotation,
    forward_kinematics,
    rotation_from_euler,
)
from .datagen import (
    DistinctnessIndex,
    FamilySpec,
    generate_config_dataset,
    generate_family,
    sample_link_lengths,
    split_family,
)
from .dataset import Dataset
from .graph import FeatureStats, JointGraph, build_graph, normalize_features
from .mpnn import MPNNModel, aggregate, build_model, compute_messages, predict, update_nodes
from .training import TrainConfig, TrainReport, load_checkpoint, mse_loss, save_checkpoint, train
from .evaluation import (
    EvalReport,
    WorstCaseExtract,
    convex_angle_distance,
    export_analysis,
    pose_errors,
    r_squared,
    worst_case_analysis,
)
