"""Teacher pruning that enlarges prediction uncertainty, followed by knowledge distillation.

Everything runs on a small numpy reverse-mode autodiff engine (``prue.tensor``).
"""

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .data import Batch, DataFormatError, Dataset, iterate, load_dataset, noisy_digits, synthetic_blobs
from .distillation import DistillConfig, distill, kd_loss, student_loss
from .nn import ArchitectureSpec, Layer, MaskedModel, build_model, family, forward, predict_proba, sparsity_report
from .pruning import METHODS, FinetuneConfig, ScoreVector, compute_scores, prune_and_finetune, select_mask
from .tensor import NumericError, ShapeError, TapeError, Tensor, backward, no_grad
from .training import OptimizerState, cross_entropy, evaluate, fit, smooth_labels, train
from .uncertainty import UncertaintyError, UncertaintyReport, delta_direct, delta_two_pass

__version__ = "0.1.0"
