"""Reconstruction of joint quasi-distributions from three marginals.

Modules:
    cher          dephasing factors and CHER marginals of the extended spin-boson model
    wigner        Wigner functions of noisy coherent and cat states
    synth         signed Gaussian mixtures with analytic marginals
    colormap      three-channel height encoding and its inverse
    dataset       on-disk training datasets and manifests
    model         residual deconvolutional generator and trainer
    verification  image and marginal metrics, ground-truth-deficient protocol
    cli           command-line pipeline
"""

__version__ = "0.1.0"
