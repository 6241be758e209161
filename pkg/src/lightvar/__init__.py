"""Lightning data assimilation on a toy model.

Flash rates are tied to column CAPE by a power-law operator. They are
assimilated either directly by 3D-VAR or through a two-step route, where
1D-VAR column retrievals become temperature pseudo-observations for a
3D-VAR or 4D-VAR analysis.
"""

__version__ = "0.1.0"

from .errors import LightvarError  # noqa: E402
from .thermo import AtmosColumn, compute_cape  # noqa: E402
from .obs_operator import (DEFAULT_PARAMS, LightningOperatorParams, flash_rate,  # noqa: E402
                           flash_rate_adjoint, flash_rate_tl)
from .toy_model import GridState, ModelConfig  # noqa: E402
from .var1d import LightningObservation, batch_retrieve, retrieve_column  # noqa: E402
from .var_nd import analyze_3dvar_direct, analyze_3dvar_pseudo, analyze_4dvar, cycle  # noqa: E402

__all__ = [
    "AtmosColumn", "DEFAULT_PARAMS", "GridState", "LightningObservation",
    "LightningOperatorParams", "LightvarError", "ModelConfig", "analyze_3dvar_direct",
    "analyze_3dvar_pseudo", "analyze_4dvar", "batch_retrieve", "compute_cape", "cycle",
    "flash_rate", "flash_rate_adjoint", "flash_rate_tl", "retrieve_column",
]
