"""Spectral, transport and alignment certificates for chains of layer matrices.

The public entry points are re-exported here; see the submodules for the
full set of checks.
"""

from .errors import (ChainCertError, ContainerError, DimensionError, InputError, ManifestError, StructureError,
                     WindowError)
from .kernels import BACKEND
from .matrix_core import GaugedSvd, LayerMatrix, gauged_svd
from .pipeline import ExtractionProtocol, analyse_chain, emit_report

__version__ = "0.1.0"

__all__ = ["BACKEND", "ChainCertError", "ContainerError", "DimensionError", "ExtractionProtocol", "GaugedSvd",
           "InputError", "LayerMatrix", "ManifestError", "StructureError", "WindowError", "analyse_chain",
           "emit_report", "gauged_svd"]
