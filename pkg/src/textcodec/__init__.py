"""Workbench for text-preserving image compression and semantic text recovery.

Two pipelines share this package:

* a learned image codec trained in two stages (rate-distortion, then
  recognition-loss fine-tuning through a frozen text recognizer), and
* a restoration chain that recovers machine-readable text from
  low-resolution, extremely quantized JPEG images (residual denoiser,
  word detection, recognition-guided patch refinement).

Everything runs at desk scale on CPU; model sizes and dataset sizes are
configurable upward.
"""

__version__ = "0.1.0"
