"""Undersampled MRI reconstruction with an attention-selection GAN on a small numpy autodiff engine."""

__version__ = "0.1.0"
