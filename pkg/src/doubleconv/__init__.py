"""Doubly convolutional layers, correlation analysis, and a training harness."""

from .archdsl import ArchSpec, parse_layer_token, parse_network, relative_params, render
from .convops import PadSpec, conv2d, extract_patches, global_avg_pool, max_pool2d
from .correlation import (
    analyze_checkpoint,
    avg_max_translation_correlation,
    gaussian_baseline,
    translation_correlation,
)
from .dconv import (
    DcnnVariant,
    DoubleConvSpec,
    MetaFilterBank,
    classify_variant,
    concat_channel_multiplier,
    double_conv_reference,
    double_conv_twostep,
    expand_meta_filters,
)
from .gradcheck import finite_diff_check
from .layers import Network
from .netbuild import build_network, load_checkpoint, save_checkpoint
from .optim import AdadeltaState, adadelta_step, sgd_step
from .tensor import (
    flat_inner,
    gaussian_fill,
    l2_norm,
    make_rng,
    read_dtns,
    translate,
    write_dtns,
)
from .train import TrainConfig, evaluate_checkpoint, train

__version__ = "0.1.0"
