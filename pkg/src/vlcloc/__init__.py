"""Indoor localization from visible-light spectral fingerprints.

Dense-network position regression, tabular GAN augmentation,
pseudo-labeling with out-of-bounds filtering, and a simulated lab corpus.
"""

__version__ = "0.1.0"
