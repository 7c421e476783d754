"""Icosahedral tangent-image depth alignment for equirectangular panoramas."""

from .alignment import (
    AffineField,
    AlignmentConfig,
    AlignmentProblem,
    AlignmentResult,
    EnergyBreakdown,
    FaceDepth,
    apply_affine,
    data_energy,
    fuse_faces,
    fuse_rasters,
    optimize,
    reg_energy,
    total_energy,
)
from .errors import InputError, NonFiniteEnergyError, NumericalError, ParameterError
from .export import (
    CameraPose,
    PointCloud,
    camera_trajectory,
    read_ply,
    render_points,
    render_points_panorama,
    unproject_panorama,
    write_ply,
)
from .losses import (
    LossConfig,
    LossValues,
    NormalMap,
    gaussian_loss,
    geo_loss,
    l1_loss,
    normals_from_depth,
    photometric_loss,
    ssim,
)
from .oracle import CorruptionSpec, SyntheticScene, analytic_panorama, corrupt_faces, depth_rmse
from .sphere import (
    EquirectImage,
    OverlapMask,
    PerspectiveView,
    TangentFrame,
    gnomonic_project,
    gnomonic_unproject,
    icosahedron_frames,
    overlap_mask,
    project_to_faces,
    sample_equirect,
)

__version__ = "0.1.0"
