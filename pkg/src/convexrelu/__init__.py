"""Globally optimal training of parallel three-layer ReLU networks.

The non-convex weight-decay training problem of K parallel sub-networks
relu(relu(X W1) w2) w3 is restated as a convex group-lasso program over
masked copies of the data (one group per activation pattern pair), solved
by accelerated proximal gradient with a penalty schedule, certified by a
dual lower bound, and mapped back to ordinary network weights.
"""

from .backend import backend_name
from .dataio import Dataset, load_csv, save_csv, synth_teacher
from .arrangements import (
    ArrangementPlan,
    MaskVector,
    count_bound_first,
    count_bound_second,
    enumerate_first_layer,
    exact_plan,
    sample_plan,
)
from .convex_model import (
    ConvexModel,
    ConvexPoint,
    GroupId,
    build_model,
    grad_smooth,
    objective_constrained,
    objective_penalized,
    predict,
    project_onto_cones,
)
from .solver import Certificate, ConvexSolution, SolveConfig, certify, prox_group, solve
from .network import (
    NetworkParams,
    SubNetwork,
    balance,
    forward,
    lift_to_convex,
    objective,
    random_params,
    reconstruct,
    sgd_train,
)

__version__ = "0.1.0"
