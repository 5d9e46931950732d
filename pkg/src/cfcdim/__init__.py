"""cfcdim: dimensioning toolkit for cognitive floating content on road grids."""

__version__ = "0.1.0"

from .grid import RoadGrid, RoadLink, build_manhattan_grid, central_zoi, grid_layout, set_zoi
from .mobility import (
    ConstantSpeed,
    Contact,
    ContactTrace,
    MobilityConfig,
    Sample,
    UniformSpeed,
    inject_trace,
    load_trace,
    save_trace,
    simulate_mobility,
)
from .engine import (
    EvaluationResult,
    FixedSNR,
    LinkFeatures,
    PathLossSNR,
    ReplayConfig,
    Replayer,
    StrategyMatrix,
    replay_cfc,
    success_ratio,
)
from .cost import (
    CostConfig,
    all_off,
    all_on,
    cost_report,
    evaluate_strategy,
    feasibility_slack,
    is_feasible,
    resource_savings,
    total_cost,
)
from .optimize import (
    AnnealParams,
    NoFeasibleSolutionError,
    SearchConfig,
    SearchSpaceError,
    exhaustive_solve,
    optimize,
)
from .dataset import (
    Dataset,
    DatasetRecord,
    StrategySampler,
    audit_labels,
    build_dataset,
    collapse_to_cheapest,
    dataset_to_csv,
    kfold_split,
    load_dataset,
    save_dataset,
)
from .baselines import (
    ConstantModel,
    DecisionTreeModel,
    KNNModel,
    RandomForestModel,
    f_score,
    load_model,
    predict_episode_strategies,
    rejection_probability,
    save_model,
    train,
)
