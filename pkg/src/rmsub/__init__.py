"""Recursive projection-aggregation decoding of Reed-Muller subcodes.

Subpackages by role: gf2 (binary linear algebra), construct (codes and
encoder search), project (cosets and projection trees), decode (MAP / FHT /
subRPA / soft-subRPA), prune (projection selection), train (learned
projection weights), sim (channels and Monte-Carlo harness), simcli (CLI).
"""

from .construct import (CodeSpec, complexity_metric_L, encoder_search,
                        load_generator, rm_generator, save_generator,
                        subcode_generator)
from .decode import (DecodeResult, DecoderConfig, decode_batch, fht_decode,
                     map_decode, recover_info_bits, soft_map, soft_subrpa_decode,
                     subrpa_decode)
from .project import (ProjectionTree, build_projection_tree, build_u_and_codebook,
                      coset_table, coset_table_1d, memory_report)
from .prune import (PruningPlan, plan_from_weights, plan_maxrank, plan_minrank,
                    plan_random)
from .sim import awgn_llr, bsc_output, run_montecarlo, snr_convert
from .train import TrainConfig, WeightState, pick_training_snr, soft_topk

__version__ = "0.1.0"
