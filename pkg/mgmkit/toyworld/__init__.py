from mgmkit.toyworld.world import Utterance, WorldSpec, gen_utterance, make_world
from mgmkit.toyworld.tasks import TASK_BUILDERS, TaskSample, build_task_sample, draw_task_sample
from mgmkit.toyworld.readout import speaker_similarity, symbol_error_rate, symbols_from_tokens
