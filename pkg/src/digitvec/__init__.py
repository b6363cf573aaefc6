"""Text-prompted speaker verification with digit-specific HMMs,
digit-specific i-vector subspaces, uncertainty-aware compensation and
score-normalized cosine scoring."""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
