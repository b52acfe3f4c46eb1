"""Indoor blimp crime-scene survey simulator and analysis toolkit."""

__version__ = "0.1.0"

from . import blimp, planner, sensors, service, stains, world  # noqa: F401
