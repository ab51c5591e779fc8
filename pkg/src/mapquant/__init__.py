"""Scene map compression: point selection over the capped simplex, product
quantization of the surviving descriptors, and a standalone low-rank adapter."""

from .errors import CompressedFormatError, DataError, MapFormatError, NumericalError
from .mapio import (CompressedMap, MapPoint, SceneMap, parse_map, read_compressed, serialize_map,
                    write_compressed)
from .pq import Codebook, adc_distance, adc_table, decode, encode, kmeans, split_vector, topk_search, train_codebooks
from .selector import (SelectionProblem, SelectionSolution, SolverOptions, distinctiveness,
                       pairwise_distance_matrix, project_capped_simplex, solve_selection, support)
from .lora import LoraAdapter, adapter_forward, adapter_grads, fit_lora, init_adapter, merge
from .pipeline import CompressionStats, compress_map

__version__ = "0.1.0"
