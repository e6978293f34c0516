"""Training, checkpointing, inference, evaluation and ablation around the refseg model."""
