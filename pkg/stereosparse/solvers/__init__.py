"""Sparse inference and dictionary learning."""

from stereosparse.solvers.lca import (
    SolverDivergenceError,
    soft_threshold,
    energy,
    init_state,
    lipschitz_bound,
    step_rate,
    lca_step,
    lca_encode
)
from stereosparse.solvers.ista import OracleSizeError, ista_oracle
from stereosparse.solvers.dictionary import (
    initial_dictionary,
    dict_gradient,
    atom_curvature,
    dict_update,
    train_dictionary,
    smoothed_descent,
    match_atoms,
    save_dictionary,
    load_dictionary
)

__all__ = [
    'SolverDivergenceError',
    'soft_threshold',
    'energy',
    'init_state',
    'lipschitz_bound',
    'step_rate',
    'lca_step',
    'lca_encode',
    'OracleSizeError',
    'ista_oracle',
    'initial_dictionary',
    'dict_gradient',
    'atom_curvature',
    'dict_update',
    'train_dictionary',
    'smoothed_descent',
    'match_atoms',
    'save_dictionary',
    'load_dictionary'
]
