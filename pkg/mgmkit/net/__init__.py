from mgmkit.net.transformer import ModelParams, NetConfig, build, forward, forward_graph, param_count
from mgmkit.net.train import Conditioner, Example, train_step
from mgmkit.net.predictor import NetPredictor
