"""Small reference architectures and their default pruning policy.

Policy: the first convolution, batch norms and the dense head stay dense;
every other convolution is pruned. The MLP has no convolutions, so all dense
layers except its head are pruned.
"""

from __future__ import annotations

from .layers import BatchNorm, Conv2d, Dense, Flatten, GlobalAvgPool, MaxPool2, ReLU, Residual
from .network import Network

MODELS = ("toy-mlp", "toy-cnn", "small-resnet")


def toy_mlp(input_shape, classes, gen, hidden=32) -> Network:
    h, w, c = input_shape
    layers = [
        Flatten("flatten"),
        Dense("fc1", h * w * c, hidden, gen), ReLU("relu1"),
        Dense("fc2", hidden, hidden, gen), ReLU("relu2"),
        Dense("head", hidden, classes, gen),
    ]
    return Network(layers, pruned=["fc1", "fc2"])


def toy_cnn(input_shape, classes, gen, width=8) -> Network:
    h, w, c = input_shape
    layers = [
        Conv2d("conv1", 3, c, width, gen, bias=False), BatchNorm("bn1", width), ReLU("relu1"),
        Conv2d("conv2", 3, width, 2 * width, gen, bias=False), BatchNorm("bn2", 2 * width),
        ReLU("relu2"),
        MaxPool2("pool"),
        Conv2d("conv3", 3, 2 * width, 2 * width, gen, bias=False), BatchNorm("bn3", 2 * width),
        ReLU("relu3"),
        GlobalAvgPool("gap"),
        Dense("head", 2 * width, classes, gen),
    ]
    return Network(layers, pruned=["conv2", "conv3"])


def small_resnet(input_shape, classes, gen, width=8, skip_1x1=False) -> Network:
    h, w, c = input_shape
    w2 = 2 * width
    block1 = Residual("block1", [
        Conv2d("b1_conv1", 3, width, width, gen, bias=False), BatchNorm("b1_bn1", width),
        ReLU("b1_relu"),
        Conv2d("b1_conv2", 3, width, width, gen, bias=False), BatchNorm("b1_bn2", width),
    ])
    block2 = Residual("block2", [
        Conv2d("b2_conv1", 3, width, w2, gen, bias=False), BatchNorm("b2_bn1", w2),
        ReLU("b2_relu"),
        Conv2d("b2_conv2", 3, w2, w2, gen, bias=False), BatchNorm("b2_bn2", w2),
    ], shortcut=Conv2d("b2_proj", 1, width, w2, gen, bias=False))
    layers = [
        Conv2d("conv1", 3, c, width, gen, bias=False), BatchNorm("bn1", width), ReLU("relu1"),
        block1, ReLU("relu_b1"),
        MaxPool2("pool"),
        block2, ReLU("relu_b2"),
        GlobalAvgPool("gap"),
        Dense("head", w2, classes, gen),
    ]
    pruned = ["b1_conv1", "b1_conv2", "b2_conv1", "b2_conv2"]
    if not skip_1x1:
        pruned.append("b2_proj")
    return Network(layers, pruned=pruned)


def build_model(name: str, input_shape, classes: int, gen, skip_1x1=False) -> Network:
    if name == "toy-mlp":
        return toy_mlp(input_shape, classes, gen)
    if name == "toy-cnn":
        return toy_cnn(input_shape, classes, gen)
    if name == "small-resnet":
        return small_resnet(input_shape, classes, gen, skip_1x1=skip_1x1)
    raise ValueError(f"unknown model {name!r}; choose from {MODELS}")
