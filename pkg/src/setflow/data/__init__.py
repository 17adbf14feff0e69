from .circles import (
    CircleFit,
    CircleSetSpec,
    DegenerateFitError,
    PhaseHistogram,
    align_phases,
    between_peak_mass,
    circle_points,
    find_circular_peaks,
    fit_circle,
    gen_circle_set,
    peak_spacings,
    phase_histogram,
    sample_circle_spec,
)
from .clouds import (
    CircleSource,
    CloudSource,
    FixedSetSource,
    ManifestEntry,
    NormalizationRecord,
    PointCloudDataset,
    build_manifest,
    load_point_clouds,
    make_batches,
    normalize_cloud,
    read_cloud,
    read_manifest,
    write_cloud,
    write_manifest,
)
from .meshes import OffParseError, TriangleMesh, format_off, parse_off, read_off, sample_mesh_points
from .procedural import airplane_mesh, write_airplane_dataset
