from mgmkit.numerics.tensor import DenseArray, Tensor
from mgmkit.numerics.rng import RngStream, rng_fork
from mgmkit.numerics.ops import softmax_cross_entropy
from mgmkit.numerics.gradcheck import gradient_check
from mgmkit.numerics.optim import AdamW, AdamWConfig
