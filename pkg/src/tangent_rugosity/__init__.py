"""Tangent-space rugosity of deep networks and its link to data augmentation."""

from .augment import AugmentationSet, LossSpec, augmented_loss, make_augmentation, theorem1_bound, verify_firstorder_bound
from .linalg import make_rng, spectral_norm
from .manifold import Dataset, gen_circle, gen_spirals, gen_swiss_roll, load_idx
from .network import Network, affine_operator, forward, init_network, load_network, save_network
from .rugosity import RugosityConfig, c_hat, jacobian_norm, network_handle, rugosity_piecewise, rugosity_smooth_mc
from .train import TrainConfig, train

__version__ = "0.1.0"
