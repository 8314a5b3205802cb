"""Adversarial example games between linear classifiers and bounded generators."""
__version__ = "0.1.0"

from .data import (DiscreteJointDistribution, LabeledDataset, SplitPlan, load_csv,
                   make_gaussian_pair, make_rng, make_two_moons, save_csv, split)
from .errors import (AEGError, ContractViolation, DivergenceError, InternalError,
                     InvalidArgument, NumericalFailure, ParseError, UnboundedMinimizer,
                     Unsupported)
from .features import FeatureMap, embed_weights, feature_jacobian, featurize
from .classifier import (LinearClassifier, TrainReport, cross_entropy, error_rate,
                         input_gradient, loss_gradient, predict, train_logreg,
                         train_robust_logreg_l1)
from .generator import (AdversarialDataset, AttackBudget, ClosedFormGenerator,
                        ParametricGenerator, attack_dataset, closed_form_attack,
                        gradient_attack, grid_attack, inner_max_value, random_noise_baseline)
from .game import (BestResponse, ExtraGradient, GameConfig, GameTrace, TrainOptions,
                   best_response_solve, duality_gap, extragradient_solve, payoff,
                   run_bilinear, verify_linear_nash)
from .entropy import (brute_force_ce_minimizer, conditional_entropy, entropy_chain,
                      f_entropy)
from .evaluation import TargetPool, TransferReport, evaluate_transfer, train_pool
from .kernels import BACKEND
