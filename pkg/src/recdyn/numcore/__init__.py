from .linalg import (
    ConvergenceError,
    SvdResult,
    eigenvalues,
    frobenius_norm,
    hessenberg,
    pca_explained_top_k,
    qr,
    singular_values,
    spectral_norm,
    spectral_radius,
    svd,
    truncate,
)
from .rng import make_rng, split

__all__ = [
    "ConvergenceError",
    "SvdResult",
    "eigenvalues",
    "frobenius_norm",
    "hessenberg",
    "make_rng",
    "pca_explained_top_k",
    "qr",
    "singular_values",
    "spectral_norm",
    "spectral_radius",
    "split",
    "svd",
    "truncate",
]
