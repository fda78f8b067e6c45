"""From-scratch float64 neural network core."""

from .layers import (
    ChannelAttention,
    Conv2D,
    Embedding,
    Flatten,
    FullyConnected,
    GRUCell,
    Layer,
    NearestUpsample,
    ReLU,
    Reshape,
    Sequential,
    Sigmoid,
    Softmax,
    SpatialAttention,
    Tanh,
    glorot_uniform,
)
from .losses import bce_with_logits, l1_loss, mse_loss, softmax_cross_entropy
from .optim import Adam
from .gradcheck import check_gradients, finite_difference, relative_error
from .checkpoint import load_checkpoint, save_checkpoint
