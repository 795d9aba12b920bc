"""Completed local derivative pattern texture descriptors.

CLDP extends the completed LBP family (sign S, magnitude M, center C)
with a directional derivative component D, the per-direction XOR of the
sign bits at radii R and R-1. All four pattern maps are riu2-mapped and
combined into joint or concatenated histograms, classified by
chi-square nearest neighbor. The suite module adds the Outex-style
benchmark protocol, an on-disk feature cache, and a synthetic dataset
generator for dataset-free end-to-end checks.
"""

from .classifier import EvalReport, ModelSet, chi_square, classify, evaluate
from .histogram import (
    FeatureHistogram,
    SchemeError,
    SchemeExpr,
    bin_index,
    build_histogram,
    component_bins,
    format_histogram_csv_row,
    group_dimension,
    histogram_from_bytes,
    histogram_to_bytes,
    parse_scheme,
    read_histogram_binary,
    scheme_dimension,
    write_histogram_binary,
    write_histograms_csv,
)
from .image import (
    FormatError,
    GrayImage,
    Manifest,
    ManifestError,
    image_mean,
    load_bmp8,
    load_image,
    load_manifest,
    load_pgm,
    normalize_image,
    save_pgm,
)
from .patterns import (
    PatternMaps,
    Riu2Mapper,
    canonical_intensity,
    code_space_stats,
    encode_center,
    encode_derivative,
    encode_magnitude,
    encode_sign,
    export_map_pgm,
    extract_maps,
    riu2_bin,
    transitions,
)
from .sampler import (
    NeighborhoodSample,
    NeighborOffset,
    SamplingGeometry,
    make_geometry,
    sample_at,
    valid_region,
)
from .suite import (
    CacheError,
    ConfigError,
    DatasetError,
    ExperimentMatrix,
    FeatureCache,
    MatrixCell,
    MatrixReport,
    SuiteError,
    SuiteSpec,
    atomic_write_bytes,
    atomic_write_text,
    histogram_for_file,
    load_matrix_config,
    load_suite_config,
    make_synthetic_suite,
    run_matrix,
    run_suite,
)

__version__ = "0.1.0"

__all__ = [
    "CacheError",
    "ConfigError",
    "DatasetError",
    "EvalReport",
    "ExperimentMatrix",
    "FeatureCache",
    "FeatureHistogram",
    "FormatError",
    "GrayImage",
    "Manifest",
    "ManifestError",
    "MatrixCell",
    "MatrixReport",
    "ModelSet",
    "NeighborOffset",
    "NeighborhoodSample",
    "PatternMaps",
    "Riu2Mapper",
    "SamplingGeometry",
    "SchemeError",
    "SchemeExpr",
    "SuiteError",
    "SuiteSpec",
    "atomic_write_bytes",
    "atomic_write_text",
    "bin_index",
    "build_histogram",
    "canonical_intensity",
    "chi_square",
    "classify",
    "code_space_stats",
    "component_bins",
    "encode_center",
    "encode_derivative",
    "encode_magnitude",
    "encode_sign",
    "evaluate",
    "export_map_pgm",
    "extract_maps",
    "format_histogram_csv_row",
    "group_dimension",
    "histogram_for_file",
    "histogram_from_bytes",
    "histogram_to_bytes",
    "image_mean",
    "load_bmp8",
    "load_image",
    "load_manifest",
    "load_matrix_config",
    "load_pgm",
    "load_suite_config",
    "make_geometry",
    "make_synthetic_suite",
    "normalize_image",
    "parse_scheme",
    "read_histogram_binary",
    "riu2_bin",
    "run_matrix",
    "run_suite",
    "sample_at",
    "save_pgm",
    "scheme_dimension",
    "transitions",
    "valid_region",
    "write_histogram_binary",
    "write_histograms_csv",
]
