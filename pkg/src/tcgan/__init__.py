"""Time-series convolutional GAN: adversarial pretraining, encoding, and downstream evaluation."""
from .data import Dataset, load_ucr, multiclass4, subsample_labels, synth_multiclass, synth_sines, z_normalize
from .downstream import KMeans, LinearClassifier, SupervisedTCGAN
from .encoder import Encoder
from .estimator import TCGAN
from .gan import Discriminator, GanConfig, Generator, TrainingDiverged, sample, train
from .metrics import EvalReport, accuracy, mmd, nmi, nnd, weighted_f1
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "Dataset", "Discriminator", "Encoder", "EvalReport", "GanConfig", "Generator", "KMeans",
    "LinearClassifier", "SupervisedTCGAN", "TCGAN", "Tensor", "TrainingDiverged", "accuracy",
    "load_ucr", "mmd", "multiclass4", "nmi", "nnd", "no_grad", "sample", "subsample_labels",
    "synth_multiclass", "synth_sines", "train", "weighted_f1", "z_normalize",
]
