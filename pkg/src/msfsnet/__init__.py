"""Multi-scale frequency-separation deblurring network on a small numpy autodiff core."""

from .config import TrainConfig, load_config
from .errors import ContractError, DimensionError, FormatError, IngestError, MSFSError, NumericalError
from .network import MSFSNet, NetworkConfig
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "ContractError", "DimensionError", "FormatError", "IngestError", "MSFSError", "MSFSNet",
    "NetworkConfig", "NumericalError", "Tensor", "TrainConfig", "load_config",
]
