from src.autodiff.tensor import Graph, Tensor, backward, parameter

__all__ = ["Graph", "Tensor", "backward", "parameter"]
