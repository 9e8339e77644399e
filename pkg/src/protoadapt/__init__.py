"""Few-shot adaptation toolkit.

Trains a prototypical embedding on synthetic episodes and adapts it to new
tasks with seeded K-means over labeled and unlabeled samples, label-free
global prototypes, or an active loop that asks for one label per cluster.
"""

from .active import AcquisitionKind, OracleProvider, ScriptedProvider, active_adapt
from .adapt import (
    ClusterState,
    KMeansMode,
    KMeansVariant,
    PrototypeSet,
    class_posterior,
    compute_prototypes,
    kmeans_objective,
    predict,
    seeded_kmeans,
    unsupervised_adapt,
)
from .embedding import (
    EmbeddingModel,
    TrainConfig,
    adam_update,
    episode_loss_and_grad,
    init_model,
    load_model,
    mlp_forward,
    save_model,
    train,
)
from .errors import (
    AdaptationError,
    ConfigError,
    IncompleteLabelingError,
    LabelsUnavailableError,
    ProtoAdaptError,
    ShapeError,
    TaskFormatError,
    TrainingError,
)
from .harness import EvalSummary, ExperimentConfig, Strategy, ci95, evaluate_strategy, run_experiment
from .sinegen import SineGenConfig, Task, laplace_sample, sample_sine_task
from .taskio import read_task_file, write_task_file

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
