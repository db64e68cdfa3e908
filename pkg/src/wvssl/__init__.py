"""Contrastive pretraining and embedding evaluation for SAR wave-mode imagery
at desk scale: scene preprocessing, stochastic view generation, a small
residual encoder trained with the normalized temperature-scaled contrastive
loss, and kNN/linear/MLP/finetune/retrieval evaluation of the embeddings."""

__version__ = "0.1.0"
