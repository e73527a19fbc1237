"""cellforge: a rule-checkable procedural cell-image world, a conditional
diffusion generator, and a feedback-driven finetuning loop around them."""

__version__ = "0.1.0"
