"""
mgmkit: masked generative modeling on discrete token streams.

Pre-training, task fine-tuning (LoRA or full) and two-stage SSL -> acoustic
token generation, checked end to end on a synthetic speech world.
"""

__version__ = "0.1.0"
