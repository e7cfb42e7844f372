"""Online learning-to-rank laboratory.

A topological-sort ranking bandit, the stochastic click models it is built
for, reference agents, closed-form regret ceilings, and Monte-Carlo
verification of the concentration and ordering guarantees behind them.
"""

from .env import (
    Action,
    AssumptionReport,
    CapacityError,
    ClickModelSpec,
    Family,
    action_value,
    cascade_as_factored,
    cascade_model,
    check_assumptions,
    click_prob,
    document_model,
    factored_model,
    load_model_spec,
    model_from_dict,
    model_to_dict,
    optimal_action,
    optimal_value,
    position_model,
    sample_clicks,
    save_model_spec,
)
from .toprank import (
    CONFIDENCE_C,
    PairStats,
    Partition,
    RelationGraph,
    TopRankState,
    choose_action,
    compute_partition,
    edge_threshold,
    sample_action,
    snapshot,
    state_from_snapshot,
    step,
    update,
)
from .baselines import (
    AGENT_IDS,
    CascadeKlUcb,
    OracleAgent,
    RandomAgent,
    TopRankAgent,
    kl_ucb_index,
    make_agent,
    oracle_act,
    random_act,
)
from .analysis import (
    BiasEstimate,
    BoundInputs,
    ConcentrationTrialSpec,
    LowerBoundInstance,
    UndefinedEstimateError,
    concentration_mc,
    first_wrong_edge,
    make_lowerbound_instance,
    pairwise_bias_estimate,
    pairwise_bias_exact,
    theorem1_bound,
    theorem1_minimax_bound,
    theorem2_lower_bound,
    wrong_edge_frequency,
)
from .harness import (
    AggregateTrace,
    ExperimentConfig,
    RegretTrace,
    run_batch,
    run_episode,
    write_trace,
)

__version__ = "0.1.0"
