"""Streaming echo cancellation, mask-based suppression and VAD-gated AGC."""

from .agc import AgcConfig, agc_process, agc_step
from .audio import StftConfig, TimeSignal, istft, read_wav, stft, write_wav
from .delay import DelayEstimate, apply_delay, estimate_delay
from .model import MaskVadOutput, ModelConfig, StreamingModel, apply_mask, assemble_features
from .pipeline import PipelineConfig, enhance
from .training import (LossConfig, TrainConfig, compute_loss, compute_psm, gradient_check,
                       train_toy)
from .weights import load_params, save_params
from .wrls import WrlsConfig, wrls_init, wrls_process, wrls_step

__version__ = "0.1.0"
