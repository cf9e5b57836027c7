"""Low-light RAW enhancement with directional-scan state-space networks.

Submodules:

    tensor    taped reverse-mode autodiff on numpy arrays
    scan      continuity-preserving grid scan orders
    ssm       ZOH discretization, selective recurrence, LTI kernel oracle
    rawio     RAW container, CFA packing, PPM output
    blocks    network building blocks
    model     the two-stage network, checkpoints, accounting
    data      synthetic dataset generation
    metrics   PSNR / SSIM
    train     loss, optimizer, schedule, training loop
    ablate    toy ablation harness
    cli       command line entry point
"""

from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    FormatError,
    NightscanError,
    NumericError,
)
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "backward",
    "no_grad",
    "NightscanError",
    "ConfigError",
    "ContractError",
    "DimensionError",
    "FormatError",
    "NumericError",
    "__version__",
]
