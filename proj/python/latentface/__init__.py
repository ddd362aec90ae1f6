"""Symmetric 3D-aware autoencoding with latent diffusion: Python surface.

Thin re-export of the compiled core. Arrays are numpy, images are [3, H, W]
in [0, 1], depth maps are [H, W] around 1.0.
"""

from ._core import (
    DataError,
    Error,
    InvalidInputError,
    NumericalError,
    conf_loss,
    ddim_sample,
    focal_length,
    frontalize,
    gen_dataset,
    invariants,
    make_schedule,
    q_sample,
    read_checkpoint_meta,
    read_checkpoint_tensors,
    reconstruct,
    render,
    render_sample,
)

__all__ = [
    "DataError",
    "Error",
    "InvalidInputError",
    "NumericalError",
    "conf_loss",
    "ddim_sample",
    "focal_length",
    "frontalize",
    "gen_dataset",
    "invariants",
    "make_schedule",
    "q_sample",
    "read_checkpoint_meta",
    "read_checkpoint_tensors",
    "reconstruct",
    "render",
    "render_sample",
]
