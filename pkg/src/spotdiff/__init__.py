"""spotdiff: desk-scale central-to-local diffusion for spatial transcriptomics.

Pipeline: unconditional pretraining of a denoising diffusion model on toy
histology corpora, gene-conditioned adaptation of a frozen backbone via
FiLM modulation, guided sampling of synthetic image-gene pairs, and
co-training of a gene-expression regressor on real plus synthetic spots.
"""

__version__ = "0.1.0"
