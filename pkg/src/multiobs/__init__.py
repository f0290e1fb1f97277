"""Monte Carlo simulation of open quantum dynamics seen by several observers.

A system damped into a shared environment is watched through multiple
measurement channels (photon counting or homodyne detection, each with its
own efficiency). The engine integrates, along one shared realization of the
measurement records, the state conditioned on *all* records together with
the state each single observer infers from their own record, and the
analytics layer estimates the overlap statistics between those state
assignments against closed-form stationary values.
"""

__version__ = "0.1.0"

from .densmat import (
    BlochVector,
    bloch_to_density,
    cat_state,
    coherent_state,
    density_to_bloch,
    excited_state,
    fidelity_2d,
    ground_state,
    make_atom_operators,
    make_fock_operators,
    maximally_mixed,
    purity,
    relative_purity,
    validate_density_matrix,
)
from .engine import (
    HOMODYNE,
    HOMODYNE_DIFFUSIVE,
    PHOTODETECTION,
    ChannelConfig,
    ModelSpec,
    TrajectoryState,
    apply_jump,
    detection_rate,
    initial_trajectory_state,
    mcsme_step_diffusive,
    mcsme_step_jump,
    run_trajectory,
    ume_solution,
    unconditional_step,
)
from .errors import (
    AnalyticsError,
    ConfigError,
    DimensionError,
    ImpossibleJumpError,
    InvalidStateError,
    ModelError,
    MultiobsError,
    StepSizeError,
)
from .stochastics import RngStream, StepRecord, sample_jump_event, sample_wiener
from .models import (
    CatState,
    build_atom_homodyne,
    build_atom_photodetection,
    build_qbm_homodyne,
    cat_sde_step,
    fokker_planck_solution,
    run_cat_ensemble,
)
from .analytics import (
    EnsembleAccumulator,
    compare_exponential,
    estimate_O,
    oracle_O1_photo,
    oracle_O11_photo,
    oracle_O12_homodyne,
    oracle_O12_photo,
    oracle_O_homodyne,
    oracle_nojump_bloch,
    oracle_nojump_bloch_single,
    two_sample_ks,
    waiting_time_density,
    waiting_time_histogram,
)
from .ensemble import EnsemblePlan, run_ensemble
from .config import ExperimentConfig, load_config, parse_config, serialize_config

__all__ = [name for name in dir() if not name.startswith("_")]
