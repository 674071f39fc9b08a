from .anchors import (
    anchors_for_scale,
    decode_boxes,
    decode_scale,
    default_anchors,
    encode_box,
    fit_anchors,
    kmeans_anchors,
)
from .checkpoint import load_checkpoint, read_header, save_checkpoint
from .model import (
    FD,
    FP,
    PCD,
    PRED_CHANNELS,
    PRESETS,
    STRIDES,
    CameraEncoder,
    ConvLSTMCell,
    DiffNet,
    ModelConfig,
    RasterEncoder,
    TemporalState,
    count_parameters,
)
from .nms import nms
