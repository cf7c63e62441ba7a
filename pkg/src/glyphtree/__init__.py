"""Character recognition from radical formation trees.

Subpackages cover the full pipeline: IDS parsing into formation trees,
a small reverse-mode tensor engine, the tree and image transformer
encoders, contrastive training, synthetic glyph data generation, and
gallery-based recognition.
"""

__version__ = "0.1.0"
