"""Laplacian-pyramid intrinsic image decomposition toolkit.

Images cross the boundary as numpy float arrays of shape (H, W, 3),
(H, W, 1) or (H, W), values nominally in [0, 1].
"""

from ._lappyr import (
    IntrinsicModel,
    collapse,
    dssim,
    edge_aware_smooth,
    evaluate,
    gaussian_reduce,
    gradcheck,
    joint_bilateral_filter,
    laplacian_expand,
    lmse,
    loss_values,
    optimal_scale,
    read_image,
    si_lmse,
    si_mse,
    ssim,
    synth_mondrian,
    train_joint,
    upsample,
    write_image,
    write_mondrian_dataset,
)

__all__ = [
    "IntrinsicModel",
    "collapse",
    "dssim",
    "edge_aware_smooth",
    "evaluate",
    "gaussian_reduce",
    "gradcheck",
    "joint_bilateral_filter",
    "laplacian_expand",
    "lmse",
    "loss_values",
    "optimal_scale",
    "read_image",
    "si_lmse",
    "si_mse",
    "ssim",
    "synth_mondrian",
    "train_joint",
    "upsample",
    "write_image",
    "write_mondrian_dataset",
]

__version__ = "0.1.0"
