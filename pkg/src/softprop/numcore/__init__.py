"""Minimal dense-tensor engine: reverse-mode autodiff, Adam, gradient checks."""

from softprop.numcore import ops
from softprop.numcore.checkpoint import config_hash, load_into, read_checkpoint, save_checkpoint
from softprop.numcore.gradcheck import grad_check, numerical_grad
from softprop.numcore.layers import MLP, ConvStack, Module
from softprop.numcore.optim import Adam, AdamState, adam_step
from softprop.numcore.tensor import Tensor, checked_mode, no_grad

__all__ = [
    "Adam", "AdamState", "ConvStack", "MLP", "Module", "Tensor", "adam_step", "checked_mode",
    "config_hash", "grad_check", "load_into", "no_grad", "numerical_grad", "ops", "read_checkpoint",
    "save_checkpoint",
]
