"""Simulation of parametrically driven two-qubit gates through a tunable coupler."""

__version__ = "0.1.0"

from .device import DeviceSpec, FluxPulse, TransmonSpec, table_one_device  # noqa: E402
from .hamiltonian import HilbertConfig, LabeledBasis  # noqa: E402

__all__ = ["DeviceSpec", "FluxPulse", "TransmonSpec", "table_one_device", "HilbertConfig", "LabeledBasis",
           "__version__"]
