"""Multi-task, multi-modal product attribute classifier."""
from .model import (
    INPUT_GROUPS, AttrModel, AttrModelConfig, TaskSpec, build_attr_model, class_weights_from_counts,
    expected_parameter_count,
)
from .trainer import (
    DroppedTaskWarning, ProtocolResult, TaskDataset, TaskMetrics, TrainHistory, TrainPlan, ablate,
    build_task_datasets, evaluate, product_split, run_protocol, train,
)

__all__ = [
    "INPUT_GROUPS", "AttrModel", "AttrModelConfig", "DroppedTaskWarning", "ProtocolResult", "TaskDataset",
    "TaskMetrics", "TaskSpec", "TrainHistory", "TrainPlan", "ablate", "build_attr_model",
    "build_task_datasets", "class_weights_from_counts", "evaluate", "expected_parameter_count",
    "product_split", "run_protocol", "train",
]
