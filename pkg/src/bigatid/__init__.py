"""Dual-branch recurrent-attention intrusion detection workbench: model
assembly and training from scratch on numpy, flow-record preprocessing,
evaluation metrics, ablation/zero-day protocols, and Shapley attribution."""

__version__ = "0.1.0"

from .model import VariantSpec, bigat_spec, build, param_total, predict, table5_variants
from .numerics import RngStream

__all__ = [
    "RngStream",
    "VariantSpec",
    "bigat_spec",
    "build",
    "param_total",
    "predict",
    "table5_variants",
    "__version__",
]
