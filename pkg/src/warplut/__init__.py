"""Trainable networks of probabilistic look-up tables.

Nodes hold spectral coefficient vectors over their inputs' signed parity
characters; relaxed sigmoid/noisy-sigmoid training makes them
differentiable, and thresholding the coefficients' corner sums hardens
each node back into an exact Boolean gate.  Trained networks compile to
standalone netlists with a bit-parallel evaluator, and a 16-gate
softmax-mixture node type is included as a baseline.
"""

from .boolean import (
    TruthTable,
    WalshCoeffs,
    classify_gate,
    gate_catalog,
    gate_name,
    nearest_truth_table,
    walsh_transform,
)
from .errors import (
    ArityError,
    CheckpointError,
    ConfigError,
    DataError,
    TrainingDiverged,
    ValidationError,
    WarpLutError,
    WiringError,
)
from .estimator import LogicGateClassifier, ThermometerEncoder
from .layers import EvalContext, InitScheme
from .netlist import (
    Netlist,
    circuit_stats,
    export_netlist,
    fold_identities,
    harden,
    load_netlist,
    netlist_eval,
    netlist_predict,
)
from .network import (
    ConvBlockSpec,
    DenseSpec,
    FlattenSpec,
    GroupSumSpec,
    InputSpec,
    LogicNetwork,
    NetworkSpec,
    arch_large_mlp,
    arch_mlp,
    arch_parity_tree,
    arch_small_conv,
    arch_smoke_mlp,
    build_network,
)
from .relaxation import RelaxMode, RelaxParams, TauSchedule
from .training import (
    MetricsRecord,
    OptimizerSpec,
    TrainConfig,
    evaluate,
    load_checkpoint,
    run_training,
    save_checkpoint,
)

__version__ = "0.1.0"

__all__ = [
    "ArityError",
    "CheckpointError",
    "ConfigError",
    "ConvBlockSpec",
    "DataError",
    "DenseSpec",
    "EvalContext",
    "FlattenSpec",
    "GroupSumSpec",
    "InitScheme",
    "InputSpec",
    "LogicGateClassifier",
    "LogicNetwork",
    "MetricsRecord",
    "Netlist",
    "NetworkSpec",
    "OptimizerSpec",
    "RelaxMode",
    "RelaxParams",
    "TauSchedule",
    "ThermometerEncoder",
    "TrainConfig",
    "TrainingDiverged",
    "TruthTable",
    "ValidationError",
    "WalshCoeffs",
    "WarpLutError",
    "WiringError",
    "arch_large_mlp",
    "arch_mlp",
    "arch_parity_tree",
    "arch_small_conv",
    "arch_smoke_mlp",
    "build_network",
    "circuit_stats",
    "classify_gate",
    "evaluate",
    "export_netlist",
    "fold_identities",
    "gate_catalog",
    "gate_name",
    "harden",
    "load_checkpoint",
    "load_netlist",
    "nearest_truth_table",
    "netlist_eval",
    "netlist_predict",
    "run_training",
    "save_checkpoint",
    "walsh_transform",
]
