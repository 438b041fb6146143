"""Unsupervised class maps for chromogenic in-situ hybridization slides.

Stages: tissue masking (:mod:`.masking`), overlapping tiling
(:mod:`.tiling`), a from-scratch convolutional autoencoder with a 2-value
code (:mod:`.nn`, :mod:`.optim`, :mod:`.model`), fuzzy c-means on the codes
(:mod:`.fcm`) and rendering (:mod:`.render`). :mod:`.cli` chains them.
"""

__version__ = "0.1.0"
