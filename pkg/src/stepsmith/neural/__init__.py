"""From-scratch reverse-mode autodiff stack used by the step models.

tensor.py holds the graph engine and the differentiable ops, layers.py
the parameterized building blocks (dense, LSTM, ConvLSTM), losses.py
the two training losses, optim.py Adam plus the two schedule helpers,
gradcheck.py the finite-difference harness, and weights_io.py the
binary checkpoint format.
"""

from stepsmith.neural.tensor import Tensor, tensor

__all__ = ["Tensor", "tensor"]
