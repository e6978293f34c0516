"""Desk-scale referring image segmentation with an object prior, a contextual multimodal decoder
and a meaning-consistency constraint, trained on synthetic scenes."""

__version__ = "0.1.0"
