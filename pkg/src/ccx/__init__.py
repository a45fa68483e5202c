"""Desk-scale bi-temporal change captioning pipeline.

Subpackages cover a dense-tensor autodiff engine, a miniature ViT-style
image encoder, a difference-aware feature enhancement module, a small
autoregressive caption decoder, the standard caption metric suite
(BLEU / METEOR / ROUGE-L / CIDEr-D), a deterministic synthetic dataset
generator, and a three-stage training harness.
"""

__version__ = "0.1.0"
