"""Virtual light-splitting prism: gate simulation, network, loss, training."""

from .gates import (
    GateUnitary, QubitGroupState, gate_unitary, lift_unitary, apply_gate,
    expect_z,
)
from .network import (
    PrismParams, init_prism_params, prism_forward, quantum_fe,
    tv_spa, tv_spe, prism_loss, train_prism, save_params, load_params,
    PrismShapeError, LayerPlan, plan_layers,
)

__all__ = [
    "GateUnitary", "QubitGroupState", "gate_unitary", "lift_unitary",
    "apply_gate", "expect_z",
    "PrismParams", "init_prism_params", "prism_forward", "quantum_fe",
    "tv_spa", "tv_spe", "prism_loss", "train_prism", "save_params",
    "load_params", "PrismShapeError", "LayerPlan", "plan_layers",
]
