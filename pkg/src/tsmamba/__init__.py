"""TS-Mamba algorithmic core: trajectory-aware shifted scans for online VSR."""

__version__ = "0.1.0"

from .numerics import ModelConfig, Tensor  # noqa: F401
from .scanorder import ScanVariant, ShiftSpec, WindowPartition, generate_scan  # noqa: F401
