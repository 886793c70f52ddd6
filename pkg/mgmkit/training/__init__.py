from mgmkit.training.pretrain import PretrainConfig, draw_training_mask, pretrain_step
from mgmkit.training.finetune import TaskSpec, finetune_step, multitask_draw
from mgmkit.training.checkpoint import Checkpoint, checkpoint_load, checkpoint_save
from mgmkit.training.loop import Trainer
