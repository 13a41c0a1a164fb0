"""Resolution-robust 3D segmentation engine built on spectral convolution
layers with shared Fourier-domain weights, residual connections, deep
supervision, and a correlation-based loss, plus the training and
evaluation harness that exercises them on synthetic volumetric data."""

__version__ = "0.1.0"
