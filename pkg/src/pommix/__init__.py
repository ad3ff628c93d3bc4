"""Graph models for molecular odor and perceptual similarity of odor mixtures."""

__version__ = "0.1.0"
