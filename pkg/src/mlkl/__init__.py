"""Multilevel Karhunen-Loeve anomaly filters for vector-valued random fields."""

from .detect import (
    AnomalyFilter,
    CellScore,
    CoefficientTable,
    DetectionReport,
    anomaly_map,
    anomaly_norm_bounds,
    anomaly_sequence,
    cell_scores,
    project,
    region_p_value,
)
from .errors import (
    DimensionError,
    DomainMismatchError,
    EmptyDomainError,
    FormatError,
    InvalidArgumentError,
    MLKLError,
    PreconditionError,
    RankDeficientError,
)
from .geometry import (
    Cell,
    IndicatorBasis,
    PiecewiseField,
    SimplicialDomain,
    build_grid_domain,
    inner_product,
    restrict,
)
from .multilevel import (
    CellBasis,
    MultilevelBasis,
    SparseFunction,
    build_multilevel,
    local_moment_matrix,
    svd_split,
)
from .partition import PartitionTree, SplitRule, TreeNode, choose_rule, make_tree
from .smoothing import robust_smooth
from .spectral import KLBasis, SnapshotSet, fit_snapshots, kl_coefficients, truncate_reconstruct

__version__ = "0.1.0"
