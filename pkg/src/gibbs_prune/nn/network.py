from __future__ import annotations

import numpy as np

from .layers import BatchNorm, _Maskable, softmax_cross_entropy


class Network:
    """An ordered stack of layers with globally unique names.

    ``pruned`` lists the maskable layers that take part in pruning by default.
    """

    def __init__(self, layers, pruned=()):
        self.layers = list(layers)
        names = [layer.name for layer in self.walk()]
        if len(set(names)) != len(names):
            raise ValueError("layer names must be unique")
        self.pruned = list(pruned)
        unknown = set(self.pruned) - set(self.maskable())
        if unknown:
            raise ValueError(f"cannot prune non-maskable layers {sorted(unknown)}")

    def walk(self):
        stack = list(reversed(self.layers))
        while stack:
            layer = stack.pop()
            yield layer
            stack.extend(reversed(layer.children()))

    def maskable(self) -> dict[str, _Maskable]:
        return {layer.name: layer for layer in self.walk() if isinstance(layer, _Maskable)}

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{layer.name}.{k}": v for layer in self.walk() for k, v in layer.params.items()}

    def set_parameters(self, values: dict[str, np.ndarray]):
        for layer in self.walk():
            for k in layer.params:
                key = f"{layer.name}.{k}"
                if key in values:
                    if values[key].shape != layer.params[k].shape:
                        raise ValueError(f"shape mismatch for {key}")
                    layer.params[k] = np.array(values[key], dtype=np.float64)

    def batchnorms(self) -> dict[str, BatchNorm]:
        return {layer.name: layer for layer in self.walk() if isinstance(layer, BatchNorm)}

    @property
    def masks(self) -> dict[str, np.ndarray | None]:
        return {name: layer.mask for name, layer in self.maskable().items()}

    def set_masks(self, masks: dict):
        layers = self.maskable()
        for name, mask in masks.items():
            layer = layers[name]
            if mask is not None:
                mask = np.asarray(mask, dtype=np.int8)
                if mask.size != layer.params["w"].size:
                    raise ValueError(f"mask for {name} has {mask.size} entries, "
                                     f"layer has {layer.params['w'].size} weights")
                mask = mask.reshape(layer.params["w"].shape)
            layer.mask = mask

    def clear_masks(self):
        for layer in self.maskable().values():
            layer.mask = None

    def forward(self, x, training=False):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x, training)
            caches.append(cache)
        return x, caches

    def backward(self, caches, dlogits):
        grads = {}
        d = dlogits
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            d, g = layer.backward(cache, d)
            if layer.children():
                grads.update(g)
            else:
                grads.update({f"{layer.name}.{k}": v for k, v in g.items()})
        return d, grads

    def loss_and_grads(self, x, labels, training=True, l1_penalty=0.0, l1_layers=()):
        """Cross-entropy (plus optional l1 penalty on the named layers' weights)
        and the gradient of that total with respect to every parameter."""
        logits, caches = self.forward(x, training)
        loss, dlogits = softmax_cross_entropy(logits, labels)
        _, grads = self.backward(caches, dlogits)
        if l1_penalty:
            layers = self.maskable()
            for name in l1_layers:
                w = layers[name].params["w"]
                loss += l1_penalty * float(np.abs(w).sum())
                grads[f"{name}.w"] = grads[f"{name}.w"] + l1_penalty * np.sign(w)
        return loss, grads, logits

    def weight_count(self, names=None) -> int:
        layers = self.maskable()
        return sum(layers[n].params["w"].size for n in (names or layers))


def forward(net: Network, batch, training=False):
    logits, caches = net.forward(batch, training)
    return logits, caches


def backward(net: Network, cache, labels):
    """Gradients of the mean cross-entropy; ``cache`` is ``(logits, caches)``."""
    logits, caches = cache
    _, dlogits = softmax_cross_entropy(logits, labels)
    _, grads = net.backward(caches, dlogits)
    return grads

