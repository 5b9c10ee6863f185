"""Stuck-at fault analysis for quantized (FINN-style) neural network accelerators."""
from .campaign import (
    AccuracyMatrix,
    CampaignPlan,
    CampaignResult,
    build_accuracy_matrix,
    evaluate_faults,
    load_result,
    plan_pe_combinations,
    plan_whole_channel,
    run_campaign,
    summarize,
)
from .core import (
    InputQuant,
    LabeledDataset,
    Layer,
    QuantizedNetwork,
    QuantSpec,
    Schedule,
    accumulator_bound,
    classify,
    default_schedule,
    evaluate,
    forward,
    infer,
    infer_batch,
)
from .errors import CheckpointMismatch, LoadError, QNNFaultError, StructuralError, UsageError
from .injector import FaultSpec, force_channel, inject, verify_all, verify_injection_equivalence
from .modelio import load_dataset, load_model, save_dataset, save_model
from .replication import (
    CostPoint,
    OpsProfile,
    ReplicationPlan,
    apply_replication,
    pareto_frontier,
    plan_replication,
    protected_campaign,
    worst_case_drop,
)
from .scheduler import SchedulingInstance, ScheduleSolution, optimal_schedule
from .synthetic import SyntheticModelSpec, generate_synthetic, make_dataset, synthetic_network

__version__ = "0.1.0"

__all__ = [
    "AccuracyMatrix",
    "CampaignPlan",
    "CampaignResult",
    "CheckpointMismatch",
    "CostPoint",
    "FaultSpec",
    "InputQuant",
    "LabeledDataset",
    "Layer",
    "LoadError",
    "OpsProfile",
    "QNNFaultError",
    "QuantSpec",
    "QuantizedNetwork",
    "ReplicationPlan",
    "Schedule",
    "ScheduleSolution",
    "SchedulingInstance",
    "StructuralError",
    "SyntheticModelSpec",
    "UsageError",
    "accumulator_bound",
    "apply_replication",
    "build_accuracy_matrix",
    "classify",
    "default_schedule",
    "evaluate",
    "evaluate_faults",
    "force_channel",
    "forward",
    "generate_synthetic",
    "infer",
    "infer_batch",
    "inject",
    "load_dataset",
    "load_model",
    "load_result",
    "make_dataset",
    "optimal_schedule",
    "pareto_frontier",
    "plan_pe_combinations",
    "plan_replication",
    "plan_whole_channel",
    "protected_campaign",
    "run_campaign",
    "save_dataset",
    "save_model",
    "summarize",
    "synthetic_network",
    "verify_all",
    "verify_injection_equivalence",
    "worst_case_drop",
]
