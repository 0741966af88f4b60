"""Delayed-observation MDPs: state augmentation, belief abstraction and value-loss guarantees."""

from dhrl.abstraction import StatePartition, epsilon_partition, exact_partition, lift_policy, quotient
from dhrl.augment import AugmentedState, augment
from dhrl.mdp import FiniteMdp, TabularPolicy, value_iteration

__all__ = [
    "AugmentedState",
    "FiniteMdp",
    "StatePartition",
    "TabularPolicy",
    "augment",
    "epsilon_partition",
    "exact_partition",
    "lift_policy",
    "quotient",
    "value_iteration",
]
