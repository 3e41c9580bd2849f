"""Dataset distillation by attention matching.

Learns a small synthetic image set by matching spatial attention maps and
last-layer feature means between real and synthetic batches, embedded by
randomly initialized convolutional encoders.
"""

__version__ = "0.1.0"
