"""Cross-view geo-localization by autoregressive zooming over a tile pyramid."""

from .errors import ZoomlocError
from .geo import GeoPoint, LocalPoint, PyramidConfig, decode_actions, encode_location, recall_at
from .policy import PolicyConfig, PolicyModel, ZoomTrace
from .world import WorldConfig, generate_world

__version__ = "0.1.0"

__all__ = [
    "GeoPoint", "LocalPoint", "PyramidConfig", "PolicyConfig", "PolicyModel", "WorldConfig", "ZoomTrace",
    "ZoomlocError", "decode_actions", "encode_location", "generate_world", "recall_at",
]
