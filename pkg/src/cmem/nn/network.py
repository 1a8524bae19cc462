import numpy as np

from .layers import LayerSpec, make_layer


class Sequential:
    """An ordered layer stack with namespaced parameters (``"3.W"``)."""

    def __init__(self, specs, seed=0, dtype=np.float32, rng=None):
        self.specs = [s if isinstance(s, LayerSpec) else LayerSpec(*s) for s in specs]
        self.seed = seed
        self.dtype = np.dtype(dtype)
        rng = rng if rng is not None else np.random.default_rng(seed)
        self.layers = [make_layer(s, rng=rng, dtype=dtype) for s in self.specs]

    def forward(self, x, train=True):
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    __call__ = forward

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def params(self):
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.params.items()}

    def grads(self):
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.grads.items()}

    def load_params(self, named):
        for i, layer in enumerate(self.layers):
            for k in layer.params:
                src = np.asarray(named[f"{i}.{k}"])
                if src.shape != layer.params[k].shape:
                    raise ValueError(f"parameter {i}.{k}: stored shape {src.shape} != {layer.params[k].shape}")
                layer.params[k][...] = src

    def shape_trace(self, in_shape):
        """Per-sample output shape after each layer, as ``[(kind, shape), ...]``."""
        trace = []
        shape = tuple(in_shape)
        for layer in self.layers:
            shape = tuple(layer.infer_shape(shape))
            trace.append((layer.spec.kind, shape))
        return trace

    def architecture(self):
        return [s.to_json() for s in self.specs]


def backward(model, dloss):
    """Reverse-mode pass through ``model``; returns gradients keyed like its params."""
    model.backward(dloss)
    return model.grads()
