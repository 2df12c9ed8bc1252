"""Profit-sharing coordination of coupled traffic and power networks."""

from importlib import resources

from .network import CoupledInstance, enumerate_paths, load_instance

__all__ = [
    "CoupledInstance",
    "enumerate_paths",
    "load_instance",
    "bundled_instance_path",
]

__version__ = "0.1.0"


def bundled_instance_path():
    """Path to the bundled 12-node / 18-bus example instance."""
    return resources.files("ptshare").joinpath("data", "coupled_12node_18bus.json")
