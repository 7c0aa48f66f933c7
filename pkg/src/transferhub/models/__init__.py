from .belm import ACTIVATIONS, Belm, BelmSpec, belm_fit, belm_search, random_features
from .gbrt import (
    GBRT_DEPTH_GRID,
    GBRT_LR_GRID,
    Gbrt,
    RegressionTree,
    fit_tree,
    gbrt_fit,
    gbrt_grid_search,
    gbrt_predict,
)
from .mlp import (
    Mlp,
    fit_scaler,
    init_mlp,
    layer_sizes,
    loss_and_grad,
    mlp_forward,
    sgd_train,
    train_source_mlp,
)

__all__ = [
    "ACTIVATIONS", "Belm", "BelmSpec", "belm_fit", "belm_search", "random_features",
    "GBRT_DEPTH_GRID", "GBRT_LR_GRID", "Gbrt", "RegressionTree", "fit_tree", "gbrt_fit",
    "gbrt_grid_search", "gbrt_predict",
    "Mlp", "fit_scaler", "init_mlp", "layer_sizes", "loss_and_grad", "mlp_forward", "sgd_train",
    "train_source_mlp",
]
