"""Learning a shared feature extractor from a stream of small tasks.

The extractor is trained so that task-specific linear heads fitted on few
samples generalise to held-out samples of the same task.
"""

from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    LabelError,
    LeadrError,
    MetricError,
    NumericError,
    ParseError,
    ShapeError,
    TaskError,
    TraceError,
)
from .evaluation import (
    EvalProtocol,
    EvalReport,
    auc_binary,
    baseline_stl,
    emit_report,
    evaluate_representation,
    multitask_protocol_run,
    read_report,
    rmse,
)
from .heads import HeadFitConfig, TaskHead, TaskKind, fit_head, head_loss_and_input_grad, predict
from .numkit import Rng, cross_entropy, matmul, softmax_rows, squared_error
from .representation import (
    FeatureExtractor,
    apply_step,
    backward,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .stream import (
    LabeledPool,
    StreamSpec,
    SyntheticFamilySpec,
    TaskEpisode,
    load_pool_csv,
    make_stream,
    partition_pool,
    sample_episode,
    save_pool_csv,
    synth_pool,
)
from .trainer import LeadrConfig, TrainLog, estimate_generalization, process_task, split_pseudo, train_stream

__version__ = "0.1.0"
