"""AEGRU motor decoder: synthetic data, training, sparsification and benchmarking."""

from .data import Recording, SynthConfig, generate_synthetic, load_ndr, save_ndr, split_recording
from .estimator import AEGRURegressor
from .metrics import BenchmarkReport, benchmark, effective_macs, memory_footprint, r2_score
from .model import AegruParams, ModelConfig, infer, init_params, load_checkpoint, save_checkpoint
from .preprocess import PreprocessConfig, SpikeWindower, make_dataset
from .sparsify import PruneConfig, QuantConfig, finetune, l1_prune, quantize, sparsity_report
from .training import TrainConfig, evaluate, grid_search, train_model

__version__ = "0.1.0"
