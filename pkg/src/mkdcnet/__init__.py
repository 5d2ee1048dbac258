"""Multiple-kernel dilated convolution segmentation network, implemented from
scratch on numpy: a 4-D tensor core, a reverse-mode gradient tape with
finite-difference-verified backward passes, the MKDC / decoder / multiscale
fusion blocks, loss and metrics, data plumbing, and a training harness.
"""

import os as _os

# Cap BLAS worker threads when MKDC_THREADS is set. Must happen before numpy
# initializes its BLAS backend, i.e. before anything imports numpy in this
# process; a no-op if numpy was already imported.
_threads = _os.environ.get("MKDC_THREADS")
if _threads:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)
del _os, _threads

from . import blocks, checks, config, data, losses, metrics, model, netpbm, ops, optim
from .config import RunConfig
from .data import AugmentConfig, Sample, SplitManifest, augment, synth_dataset
from .gradcheck import grad_check
from .losses import bce_dice_loss, bce_loss, dice_loss
from .metrics import ConfusionCounts, MetricReport, confusion, fps_bench, metrics_from_counts
from .model import MKDCNet, ModelConfig, build_model, count_params
from .ops import (BatchNormState, Conv2dParams, batchnorm2d, bilinear_upsample2x,
                  concat_channels, conv2d, elementwise, pool)
from .optim import Adam, EarlyStopper, PlateauScheduler
from .tape import GradTape, OpNode
from .tensor import Shape4, ShapeError, Tensor
from .train import evaluate, run_training

__version__ = "0.1.0"
