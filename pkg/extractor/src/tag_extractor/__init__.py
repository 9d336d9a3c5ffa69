"""tag-extractor: offline embedding artifacts for the segmentation engine.

Emits dense DINOv2 and CLIP value-path feature tensors, CLIP text
embeddings for captions and vocabulary, and sentence embeddings for
vocabulary and class names, all in the engine's documented file formats.
"""

from .clip_dense import extract_clip_dense
from .dino_dense import extract_dino_dense
from .text_embed import ClipTextEncoder, SentenceEncoder, export_text_table

__version__ = "0.1.0"
