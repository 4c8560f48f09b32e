from . import layers
from .network import (
    Attention,
    Bottleneck,
    Conv,
    Dense,
    Flatten,
    NetworkSpec,
    Output,
    Parameters,
    PRESET_TRAINING,
    forward_features,
    init_parameters,
    l2_penalty,
    load_model,
    network_backward,
    network_forward,
    preset_spec,
    save_model,
)
