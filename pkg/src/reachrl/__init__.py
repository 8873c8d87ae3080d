"""Reaching-behavior toolkit: kinematic chain, reaching environment, PPO, IK and depth perception."""
from .chain import (
    KinematicChain,
    RigidTransform,
    check_self_collision,
    forward_kinematics,
    head_direction,
    jacobian,
    load_chain,
    transform_point,
)
from .config import ConfigError, load_config
from .env import ReachEnv, arm_reward, combined_reward, head_reward
from .kernels import BACKEND

__version__ = "0.1.0"
