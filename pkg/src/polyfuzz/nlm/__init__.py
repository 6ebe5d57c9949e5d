"""Numeric core: CBOW embeddings, recurrent cells, attention and the model container."""

from .attention import AttentionContext, EmptyEncoderError, attend, attend_backward, attend_batch
from .cbow import EmbeddingTable, EmptyCorpusError, cbow_loss_and_grads, context_windows, train_cbow
from .cells import CELL_KINDS, RecurrentCell, ShapeError, step
from .container import ContainerError, load_model, save_model
from .functional import (Adam, SGD, clip_gradients, cross_entropy, global_norm, log_softmax,
                         make_optimizer, sigmoid, softmax, uniform_init)
from .gradcheck import check_gradients, max_relative_error, numeric_grad

__all__ = [
    "AttentionContext", "EmptyEncoderError", "attend", "attend_backward", "attend_batch",
    "EmbeddingTable", "EmptyCorpusError", "cbow_loss_and_grads", "context_windows", "train_cbow",
    "CELL_KINDS", "RecurrentCell", "ShapeError", "step",
    "ContainerError", "load_model", "save_model",
    "Adam", "SGD", "clip_gradients", "cross_entropy", "global_norm", "log_softmax",
    "make_optimizer", "sigmoid", "softmax", "uniform_init",
    "check_gradients", "max_relative_error", "numeric_grad",
]
