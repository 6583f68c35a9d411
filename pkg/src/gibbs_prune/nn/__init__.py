"""A small NumPy network stack with maskable convolutional and dense layers."""

from .layers import BatchNorm, Conv2d, Dense, Flatten, GlobalAvgPool, MaxPool2, ReLU, Residual
from .models import MODELS, build_model
from .network import Network
from .optim import Adam
from .train import GibbsPruner, PruneConfig, train_and_prune
