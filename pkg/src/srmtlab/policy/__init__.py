from .network import (
    CORE_KINDS,
    Policy,
    PolicyConfig,
    PolicyOutput,
    init_params,
    joint_step,
)

__all__ = ["CORE_KINDS", "Policy", "PolicyConfig", "PolicyOutput", "init_params", "joint_step"]
