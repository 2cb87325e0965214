"""
stereosparse - convolutional sparse coding on stereo video for window-level vehicle detection
"""

__version__ = "0.1.0"
