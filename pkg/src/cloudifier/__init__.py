"""Dense per-pixel UI widget segmentation on a small NumPy autodiff core."""

from .network import VARIANTS, Network, build_network, variant_config
from .tensor import GradTape, Tensor, backward

__version__ = "0.1.0"

__all__ = ["GradTape", "Network", "Tensor", "VARIANTS", "backward", "build_network", "variant_config"]
