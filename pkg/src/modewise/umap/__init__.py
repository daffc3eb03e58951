"""Two-phase nonlinear dimension reduction: fuzzy neighbor graph + SGD layout."""

from .embed import (
    Embedding,
    LayoutModel,
    UmapConfig,
    embed_rows,
    export_embedding_csv,
    read_embedding_csv,
    units_to_rows,
)
from .graph import (
    KnnResult,
    NeighborGraph,
    SmoothKnn,
    build_neighbor_graph,
    fuzzy_weights,
    knn_graph,
    smooth_knn,
    symmetrize,
)
from .layout import (
    derive_point_seeds,
    fit_curve_params,
    kernel,
    optimize_layout,
    spectral_init,
)

__all__ = [
    "Embedding", "LayoutModel", "UmapConfig", "embed_rows",
    "export_embedding_csv", "read_embedding_csv", "units_to_rows",
    "KnnResult", "NeighborGraph", "SmoothKnn", "build_neighbor_graph",
    "fuzzy_weights", "knn_graph", "smooth_knn", "symmetrize",
    "derive_point_seeds", "fit_curve_params", "kernel", "optimize_layout",
    "spectral_init",
]
