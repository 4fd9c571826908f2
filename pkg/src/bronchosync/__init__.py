"""Multimodal bronchoscopic video synchronization toolkit.

Builds an airway model from a synthetic phantom, generates ground-truthed
multimodal exam videos, registers them to the model, and synchronizes the
streams for frame-accurate bidirectional playback.
"""

__version__ = "0.1.0"
