"""Generated-data pretraining benchmark for time-series classification."""

from .backbones import DualDomainModel, EncoderModel, ResNet, ResNetSpec, Transformer, TransformerSpec
from .baselines import OneNearestNeighborClassifier, dtw_distance, euclidean_distance
from .datasets import Dataset, load_dataset, split, synth_dataset, write_dataset, znormalize
from .evaluation import ResultsMatrix, RankTable, average_rank, emit_report, size_vs_gain, top_k
from .generators import make_generator, n_gen_policy
from .pipeline import ExperimentConfig, ExperimentRecord, PretrainedClassifier, run_experiment, run_grid

__version__ = "0.1.0"

__all__ = [
    "DualDomainModel", "EncoderModel", "ResNet", "ResNetSpec", "Transformer", "TransformerSpec",
    "OneNearestNeighborClassifier", "dtw_distance", "euclidean_distance",
    "Dataset", "load_dataset", "split", "synth_dataset", "write_dataset", "znormalize",
    "ResultsMatrix", "RankTable", "average_rank", "emit_report", "size_vs_gain", "top_k",
    "make_generator", "n_gen_policy",
    "ExperimentConfig", "ExperimentRecord", "PretrainedClassifier", "run_experiment", "run_grid",
]
