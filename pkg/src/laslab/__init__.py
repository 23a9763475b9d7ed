"""Listen-Attend-Spell laboratory: a numpy LAS speech recognizer with its
training recipe, beam search with LM fusion and a synthetic test bed."""

from .las import LasConfig, LasModel, load_checkpoint, save_checkpoint
from .numerics import Tensor, grad_check, no_grad

__version__ = "0.1.0"

__all__ = ["LasConfig", "LasModel", "Tensor", "grad_check", "load_checkpoint", "no_grad", "save_checkpoint"]
