"""Toy-scale training core for compositional vision-language learning with
synthetic hard negatives and an adaptive margin loss."""

__version__ = "0.1.0"
