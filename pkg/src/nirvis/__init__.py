"""Paired NIR-VIS facial image generation and cross-modal recognition toolkit.

Pipeline stages:

* ``texmaps``       -- texture containers, radiometric image I/O, base filters
* ``nir_transform`` -- per-pixel VIS-to-NIR reflectance transformation
* ``render``        -- GGX environment-lit renderers and paired pose sampling
* ``losses``        -- margin softmax, MMD, PMSE and identity-MMD objectives
* ``toytrain``      -- desk-scale two-modality embedding trainer
* ``metrics``       -- MS/MIS/FID, VR@FAR, Rank-1 and the ten-fold protocol
* ``cli``           -- command-line entry points binding the stages together

All spatial filter widths (sigma) are in texel units throughout.
"""

__version__ = "0.1.0"
