"""Online-clustering self-supervised representation learning with balanced
Sinkhorn codes, swapped prediction and multi-crop views, plus the
DeepCluster-v2, SeLa-v2 and SimCLR baselines, at desk scale in numpy."""

from .assignment import SinkhornConfig, sinkhorn_codes, spherical_kmeans, KMeansConfig
from .config import RunConfig, load_config, parse_config
from .data import Dataset, SyntheticConfig, generate_synthetic, load_dataset, save_dataset
from .evaluation import knn_classify, linear_probe, nmi
from .numerics import Rng, SwavError
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "SinkhornConfig", "sinkhorn_codes", "spherical_kmeans", "KMeansConfig",
    "RunConfig", "load_config", "parse_config",
    "Dataset", "SyntheticConfig", "generate_synthetic", "load_dataset", "save_dataset",
    "knn_classify", "linear_probe", "nmi", "Rng", "SwavError", "TrainConfig", "train",
]
