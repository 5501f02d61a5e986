"""Bond-graph-informed encoders for multivariate time series.

Bond graphs (``bondgraph``), their bond matrix (``bondmatrix``), the compiled
variable graph (``dualgraph``), frequency-domain operators (``spectral``), the
trainable encoder (``encoder``), a DC-motor simulator (``dcmotor``) and the
forecasting harness (``training``, ``metrics``, ``experiment``, ``cli``).
"""
from .bondgraph import BondGraph, Bond, Component, Kind, Ref, dc_motor, emit_dsl, load_dsl, parse_dsl, validate
from .bondmatrix import BondMatrix, build_bond_matrix, reconstruct_bond_graph
from .dualgraph import DualGraph, compile_dual_graph, message_stencil, parse_mapping
from .encoder import EncoderConfig, NBgE
from .metrics import huber_loss, soft_dtw
from .training import Forecaster, Scenario, TrainConfig, build_forecaster, evaluate, run_protocol, train

__version__ = "0.1.0"

__all__ = [
    "Bond", "BondGraph", "BondMatrix", "Component", "DualGraph", "EncoderConfig", "Forecaster", "Kind", "NBgE",
    "Ref", "Scenario", "TrainConfig", "build_bond_matrix", "build_forecaster", "compile_dual_graph", "dc_motor",
    "emit_dsl", "evaluate", "huber_loss", "load_dsl", "message_stencil", "parse_dsl", "parse_mapping",
    "reconstruct_bond_graph", "run_protocol", "soft_dtw", "train", "validate",
]
