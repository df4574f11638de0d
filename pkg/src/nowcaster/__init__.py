"""Mixed-frequency nowcasting with LSTM ensembles, plus ARMA and DFM baselines."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
