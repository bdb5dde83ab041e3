"""Coreset-based CNN interpretation toolkit.

Selects representative per-class subsets of activation data, extracts
relevant internal features with three interpretation methods (NMF
components, sparse unit identification, topic projections), and
quantifies how close subset-derived interpretations are to full-dataset
interpretations with a rotation-invariant shape metric.
"""

from .activation_store import (
    ActivationDataset,
    ActivationTensor,
    ActivationVectorSet,
    ClassifierHead,
    DatasetManifest,
    DatasetView,
    global_average_pool,
    load_dataset,
    make_synthetic,
    partition_by_class,
)
from .coreset import (
    Coreset,
    CoresetSelector,
    CoresetSpec,
    apply_coreset,
    build_coreset,
    build_knn_graph,
    class_center,
    load_coreset,
    save_coreset,
    select_dgpruning,
    select_moderate,
    select_random,
)
from .fidelity import FidelityReport, classify, perturb_and_classify
from .interp_ice import ActivationNmf, fit_nmf, ice_maps
from .interp_topic import TopicModel, fit_topics, topic_maps, topic_reconstruct
from .interp_vebi import (
    RelevantUnit,
    RelevantUnits,
    align_unit_sets,
    build_unit_matrix,
    identify_units,
    intersection_coverage,
    solve_lasso,
    vebi_maps,
)
from .simeval import (
    RobustnessReport,
    ShapeMetricConfig,
    SimilarityReport,
    angular_shape_distance,
    flatten_maps,
    phi_average,
    robustness_summary,
)
from .validation import ComputationError, ValidationError
from .viz import Heatmap, compose_heatmap, compose_panel, overlay, score_maps

__version__ = "0.1.0"
