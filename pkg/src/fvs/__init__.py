"""Sensor-fused online video stabilization.

Fuses gyroscope/OIS logs with optical flow to produce a smooth virtual
camera path and rolling-shutter-corrected warp meshes.  The virtual path
is found either by direct optimization of the unsupervised loss suite or
by a small learned predictor (flow encoder + LSTM cell + FC head).
"""

__version__ = "0.1.0"
