"""Sequence classification with a derivative-of-state gated recurrent cell.

The public surface re-exports the cell, training loop, data handling, and
verification entry points; the command line lives in drnn.cli.
"""

from .cell import (CellParams, CellState, StepTrace, cell_output,
                   dos_acceleration, dos_velocity, forward_sequence, gate_forget,
                   gate_input, gate_output, load_params, pre_state, save_params,
                   step, update_state)
from .data import (Dataset, DatasetFormatError, LabeledSequence, PcaModel,
                   jacobi_eigh, load_dataset, load_pca, pca_fit, pca_reconstruct,
                   pca_transform, save_dataset, save_pca, split_by_subject,
                   synth_spike_dataset)
from .numeric import affine, init_matrix, sigmoid, softmax, tanh_act
from .training import (BpttMode, GradCheckResult, GradientSet, LossMode,
                       TrainConfig, backward, evaluate, finite_diff_grad,
                       frozen_dos_outputs, load_loss_curve, loss_logit_gradient,
                       nll_loss, run_gradient_checks, save_loss_curve,
                       sequence_loss, sgd_step, train)

__version__ = "0.1.0"

__all__ = [
    "BpttMode", "CellParams", "CellState", "Dataset", "DatasetFormatError",
    "GradCheckResult", "GradientSet", "LabeledSequence", "LossMode", "PcaModel",
    "StepTrace", "TrainConfig", "affine", "backward", "cell_output",
    "dos_acceleration", "dos_velocity", "evaluate", "finite_diff_grad",
    "forward_sequence", "frozen_dos_outputs", "gate_forget", "gate_input",
    "gate_output", "init_matrix", "jacobi_eigh", "load_dataset",
    "load_loss_curve", "load_params", "load_pca", "loss_logit_gradient",
    "nll_loss", "pca_fit", "pca_reconstruct", "pca_transform", "pre_state",
    "run_gradient_checks", "save_dataset", "save_loss_curve", "save_params",
    "save_pca", "sequence_loss", "sgd_step", "sigmoid", "softmax",
    "split_by_subject", "step", "synth_spike_dataset", "tanh_act", "train",
    "update_state",
]
