"""Train-once, forecast-any-horizon time-series transformer.

The model fills the requested horizon with zero placeholders, segments
context and horizon into patches at several sizes, runs a shared masked
self-attention backbone with tunable rotary position embeddings, and
averages the per-size forecasts. Because placeholder patches are blocked
as attention keys, every already-predicted position is bitwise invariant
to extending the horizon.
"""

from .backbone import AttentionConfig, LayerWeights, masked_attention, transformer_block
from .data_io import Dataset, Scaler, SplitSpec, load_csv, sample_windows, split_and_scale, stride_windows
from .evaluation import MetricReport, MetricRow, nmae, nrmse, varied_horizon_eval
from .model import (
    ElasTSTConfig,
    Forecast,
    ModelState,
    composite_loss,
    forward,
    forward_batch,
    load_model,
    read_checkpoint,
    write_checkpoint,
)
from .numerics import Graph, Tensor, backward, finite_diff_check
from .patching import PatchGrid, Window, attention_key_mask, segment, unpatch
from .training import (
    Checkpoint,
    TrainConfig,
    TrainData,
    adam_step,
    expected_weight_oracle,
    reweight,
    reweight_vector,
    train,
)
from .trope import PeriodSpec, TunablePeriods, init_periods, relative_score, rotate

__version__ = "0.1.0"
