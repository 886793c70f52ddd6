from mgmkit.algorithms.schedule import mask_fraction, remask_count, sample_mask
from mgmkit.algorithms.objective import masked_loss
from mgmkit.algorithms.confidence import confidence_select
from mgmkit.algorithms.guidance import cfg_combine
from mgmkit.algorithms.iterative import IterativeDecoder, iterative_decode
from mgmkit.algorithms.layerwise import LayerwiseDecoder
