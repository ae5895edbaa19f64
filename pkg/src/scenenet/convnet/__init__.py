from .layers import cross_entropy, leaky_relu, softmax
from .network import Architecture, ForwardTrace, LayerSpec, Network, glorot_uniform_init, layer_specs, parameter_shapes
from .serialize import decode_model, encode_model, read_activation_export, write_activation_export

__all__ = [
    "Architecture", "ForwardTrace", "LayerSpec", "Network", "cross_entropy", "decode_model",
    "encode_model", "glorot_uniform_init", "layer_specs", "leaky_relu", "parameter_shapes",
    "read_activation_export", "softmax", "write_activation_export",
]
