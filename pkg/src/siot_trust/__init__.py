"""Trust estimation for Social IoT interaction traces."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("siot-trust")
except PackageNotFoundError:
    __version__ = "0.0.0"
