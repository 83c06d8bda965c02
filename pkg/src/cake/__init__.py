"""Pointwise confidence for hard-clustering ensembles.

Build an ensemble of R clustering runs, measure each point's assignment
stability (aligned cross-run agreement) and geometric reliability
(ensemble Silhouette statistics), and fuse the two into CAKE confidence
scores in [0, 1]. Ships the agreement/entropy/bootstrap baselines, an
evaluation battery for selective clustering, and Monte-Carlo checks of
the concentration bounds that back the scores.
"""

from . import align, baseline, bounds, cluster, data, evaluate, geometry, score
from .align import StabilityVector, align_partition, contingency, hungarian_max, stability
from .baseline import (
    BootstrapConfig,
    bootstrap_stability,
    consensus,
    entropy_agreement,
    rank_average_fusion,
)
from .cluster import (
    EnsembleConfig,
    LabelMatrix,
    Partition,
    build_ensemble,
    concat_ensembles,
    gmm_fit,
    gmm_pmax,
    import_labels,
    kmeans,
    kmedoids,
    minibatch_kmeans,
)
from .data import GroundTruth, SyntheticSpec, generate_synthetic, load_csv, standardize
from .evaluate import (
    FilterSpec,
    accuracy_after_alignment,
    ami,
    ari,
    auprc,
    auroc,
    aurc,
    coverage_accuracy,
    filter_and_recluster,
    nmi,
    spearman_percentile,
)
from .geometry import (
    KernelGram,
    aggregate,
    kernel_gram_self_tuning_rbf,
    silhouette_centroid,
    silhouette_exact,
    silhouette_kernel,
)
from .score import ScoreTable, cake_hm, cake_pr, compute_scores

__version__ = "0.1.0"
