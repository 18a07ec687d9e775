"""Desk-scale visual question answering platform.

Upload an image ZIP and a question/answer CSV, fine-tune a small
single-stream or dual-stream transformer, and evaluate interactively
with attention-based bounding-box explanations.
"""

__version__ = "0.1.0"
