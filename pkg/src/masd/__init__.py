"""Multi-modality assisted decoding of word-reading MEG trials.

Pipeline pieces: corpus/task labels, envelope preprocessing, noise
augmentation, frozen modality embeddings, a dual-branch convolutional brain
model with contrastive alignment losses, training/evaluation harnesses, and
a synthetic dataset generator for end-to-end validation.
"""

__version__ = "0.1.0"
