from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .layers import conv_backward, conv_forward, gcn_backward, gcn_forward, normalized_adjacency
from .model import PixelClassifier, ScopeNet, init_params, param_shapes, softmax
from .optim import AdamState, adam_step
