"""Trinity detector: frequency channel attention fused with text/image
embeddings for telling diffusion-generated images from real ones."""

__version__ = "0.1.0"
