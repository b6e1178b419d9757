"""Diffractive-lens multi-spectral imaging: simulation and reconstruction.

A diffractive lens focuses each wavelength at its own distance, so a
monochrome detector records superpositions of differently blurred spectral
bands.  This package synthesizes such measurements, recovers the spectral
cube by constrained ADMM with analytical priors or half-quadratic splitting
with a pluggable denoiser, and quantifies resolution through conditioning
and point-target experiments.
"""

from .analysis import (
    ConditioningReport,
    ResolutionResult,
    SensitivityReport,
    conditioning_sweep,
    misplacement_sensitivity,
    resolution_experiment,
    setting_comparison,
    standard_point_layout,
    submatrix_conditioning,
)
from .cube_io import (
    MeasurementSet,
    PointSceneSpec,
    PointSource,
    SpectralCube,
    cube_metrics,
    grid_point_layout,
    make_phantom_cube,
    make_point_scene,
    psnr,
    read_cube,
    read_measurements,
    ssim,
    write_cube,
    write_measurements,
    write_pgm,
)
from .errors import ConfigError, DomainError, FormatError, SamplingError, SolverError
from .forward import (
    NoiseSpec,
    PsfBank,
    add_noise,
    apply_adjoint,
    apply_forward,
    bank_from_kernels,
    bank_from_psfs,
    build_bank,
    fd_geometries,
    md_geometries,
    simulate_measurements,
)
from .optics import (
    AcquisitionGeometry,
    ApertureModel,
    DiffractiveLensSpec,
    PsfGrid,
    bessel_j1,
    focal_length,
    geometry_at_focus,
    jinc,
    max_admissible_pitch,
    psf_approx,
    psf_exact,
    refocus_diameter,
    spectral_bandwidth,
)
from .recon_admm import (
    AdmmResult,
    ReconConfig,
    SigmaInverse,
    admm_reconstruct,
    default_epsilon,
    precompute_sigma_inverse,
    project_epsilon_ball,
    prox_soft,
    prox_tv,
    x_update,
)
from .recon_hqs import (
    DenoiserHandle,
    HqsConfig,
    HqsResult,
    data_consistency_update,
    hqs_reconstruct,
    make_denoiser,
)

__version__ = "0.1.0"
