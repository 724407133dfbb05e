from .network import (GraphBatch, ParameterSet, actor_forward, batch_graphs, critic_forward,
                      load_checkpoint, parameter_shapes, rgcn_layer, save_checkpoint)
from .tensor import Tensor

__all__ = ["GraphBatch", "ParameterSet", "Tensor", "actor_forward", "batch_graphs",
           "critic_forward", "load_checkpoint", "parameter_shapes", "rgcn_layer",
           "save_checkpoint"]
