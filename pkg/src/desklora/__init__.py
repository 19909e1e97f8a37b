"""desklora: desk-scale NF4-quantized low-rank fine-tuning engine."""

__version__ = "0.1.0"
