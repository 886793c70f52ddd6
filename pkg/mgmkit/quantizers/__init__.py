from mgmkit.quantizers.codebook import Codebook, FeatureSequence, vq_quantize, vq_train_step
from mgmkit.quantizers.rvq import RvqCodebook, rvq_decode, rvq_encode
from mgmkit.quantizers.codec import CodecConfig, FeatureCodec
