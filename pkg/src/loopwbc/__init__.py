"""Loop-closure rigid-body dynamics, hierarchical whole-body control and LQR balancing
for two-wheeled bipedal robots."""

from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"
