"""Marginalized-corruption (dropout) training of linear and one-hidden-layer
SVMs, logistic regression and support vector regression by iteratively
re-weighted least squares."""
from .baseline import train_explicit
from .data import Dataset, Task, delete_features, from_dense, kfold, load_sparse, metrics, one_vs_all_predict, one_vs_all_train, save_sparse
from .latent import LatentModel, predict_latent, train_latent
from .linear import LinearModel, Loss, ReweightMode, TrainConfig, predict, train_hinge, train_logistic, train_svr
from .modelio import load_model, save_model
from .noise import NoiseKind, NoiseModel

__version__ = "0.1.0"

__all__ = [
    "Dataset", "LatentModel", "LinearModel", "Loss", "NoiseKind", "NoiseModel", "ReweightMode", "Task",
    "TrainConfig", "delete_features", "from_dense", "kfold", "load_model", "load_sparse", "metrics",
    "one_vs_all_predict", "one_vs_all_train", "predict", "predict_latent", "save_model", "save_sparse",
    "train_explicit", "train_hinge", "train_latent", "train_logistic", "train_svr",
]
