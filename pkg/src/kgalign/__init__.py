"""Entity alignment between knowledge graphs with a dual attention matching
encoder and normalised hard-sample mining."""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, config_from_dict
from .encoder import EncoderConfig, ParameterSet, PairGraph, forward, init_parameters
from .evaluation import EvalReport, evaluate_embeddings
from .graph import GraphPair, KnowledgeGraph, SynthConfig, Triple, generate_synthetic_pair, load_graph_pair
from .losses import LossConfig, nhsm_loss
from .trainer import TrainConfig, semi_supervised_train, train

__version__ = "0.1.0"
