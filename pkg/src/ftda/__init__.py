"""Further-training sensitivity scores for trained models.

Given only a final model and its training data, the gold-standard
machinery here measures each training instance's influence by continuing
training with and without it (seed-averaged, adjusted for the drift of
continued training alone), and the attributors approximate those scores
from gradients and curvature at the final parameters.
"""

from .attributors import (AttributionVector, TrakConfig, datainf,
                          generalized_influence_attr, grad_cos, grad_dot,
                          influence_attr, taylor_expand_objective, trak_m1)
from .data import (CsvSchema, Dataset, EvalSubsets, SplitSpec, Task,
                   flip_labels, load_csv, make_synthetic, select_subsets,
                   split, standardize)
from .evaluation import (SeedGroupCurve, SimilarityCurve, cosine_sim,
                         mislabel_auc, seed_group_curves, similarity_curves,
                         spearman)
from .goldstd import (GoldRunRecord, GoldScores, adjust_full_subtract,
                      adjust_mean_subtract, retrain_gold, run_gold_sweep)
from .model import (GaussNewtonContext, ModelState, build_gauss_newton_context,
                    forward, gnvp, grad, hvp, init_mlp, load_model, loss,
                    per_example_grads, save_model, scalar_output)
from .solvers import CurvatureOp, SolverReport, cg_solve, lissa_solve
from .training import TrainPlan, Trajectory, shuffle_order, train

__version__ = "0.1.0"
