"""Minimal reverse-mode differentiation over float64 numpy arrays."""

from .gradcheck import check_all_ops, grad_check
from .graph import Graph, Node, Tensor, as_tensor, backward
from .ops import OPS, RunningStats

__all__ = [
    "Graph",
    "Node",
    "OPS",
    "RunningStats",
    "Tensor",
    "as_tensor",
    "backward",
    "check_all_ops",
    "grad_check",
]
