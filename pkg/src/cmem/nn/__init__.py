from .gradcheck import central_difference, max_relative_error
from .layers import (
    Conv2D, Dense, Flatten, LayerSpec, MaxPool2x2, NoForwardError, ReLU, Reshape, ShapeError,
    Sigmoid, Upsample2x2, activation, conv2d_forward, dense_forward, maxpool2x2, relu, sigmoid,
    upsample2x2,
)
from .losses import (
    bce_sigmoid_grad, kl_diag_gaussian, kl_diag_gaussian_grad, loss_bce, loss_bce_grad, loss_mse,
    loss_mse_grad, reparameterize, reparameterize_grad,
)
from .network import Sequential, backward
from .optim import AdamState, adam_step
