"""Bayesian twin-network pretraining with SG-MCMC posterior sampling,
snapshot ensembles, and uncertainty-aware downstream evaluation."""

from .autodiff import Tape, Tensor, forward_op, grad_check
from .config import RunConfig
from .data import AugmentationConfig, Dataset, augment_pair, make_clusters, make_ood, minibatches
from .diagnostics import ChainStats, QuadraticTarget, quadratic_grad, run_chain
from .finetune import ClassifierHead, FineTuneConfig, finetune, predict_logits, subset_labels
from .metrics import EvalReport, accuracy, aggregate_seeds, auroc, entropy_histogram, nll
from .model import (Architecture, TwinModel, byol_loss_one_direction,
                    byol_loss_symmetrized, embed, ema_update, init_twin)
from .params import ParamVector
from .posterior import (PosteriorEnsemble, Snapshot, bma_predict, collect,
                        load_ensemble, predictive_entropy, save_ensemble)
from .sampler import (SamplerConfig, SamplerState, cyclic_lr, make_state,
                      posterior_grad, sghmc_step, sgld_step, should_yield)

__version__ = "0.1.0"
