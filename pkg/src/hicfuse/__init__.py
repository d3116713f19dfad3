"""hicfuse: multimodal Hi-C / epigenomic-track modelling toolkit.

Subpackages cover the full desk-scale pipeline: simplified-format genomic
I/O, preprocessing into paired windows, dual hierarchical transformer
encoders, cross-modal interaction/mapping pretraining, task fine-tuning
heads, whole-chromosome loop annotation, and evaluation utilities.
"""

__version__ = "0.1.0"

ARCHIVE_MAGIC = b"MXH1"
CHECKPOINT_FORMAT_VERSION = 1
