from mgmkit.adaptation.adapter import FrameAdapter, adapter_inject
from mgmkit.adaptation.conditioning import TaskConditioner, concat_condition, condition_dropout, interp_align
from mgmkit.adaptation.lora import DEFAULT_TARGETS, LoraOverlay, lora_attach, lora_merge
