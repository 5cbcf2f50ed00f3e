"""Minimal numpy network engine: layers, AdamW, training loop, gradient checks."""
from .gradcheck import LAYER_TYPES, grad_check, layer_grad_check
from .layers import (Conv2d, Dropout, Embedding, Gelu, LayerNorm, Linear, LstmCell, MaxPool, Mlp,
                     MultiHeadSelfAttention, SigmoidHead, sigmoid)
from .module import Module, bce_with_logits
from .optim import AdamW
from .serialize import load_tensors, save_tensors
from .training import TrainConfig, predict_logits, train
