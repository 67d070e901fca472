"""Word-level font-to-font translation with a convolutional recurrent conditional GAN."""

__version__ = "0.1.0"
