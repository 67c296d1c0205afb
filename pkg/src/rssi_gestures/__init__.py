"""Hand-gesture recognition from Wi-Fi RSSI streams."""

from rssi_gestures.labels import GestureLabel

__version__ = "0.1.0"

__all__ = ["GestureLabel", "__version__"]
