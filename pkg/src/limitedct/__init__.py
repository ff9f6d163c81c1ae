"""Limited-angle CT reconstruction with complementary frame and TV priors."""

from .experiment import RunConfig
from .frames import WindowSpec, analysis, build_wedge_adapted_bank, build_window_bank, synthesis
from .metrics import psnr, rel_l2, ssim
from .radon import Geometry, Sinogram, fbp, full_geometry, limited_mask, radon_adjoint, radon_forward, radon_limited
from .solvers import (
    DivergenceError, SolveReport, SolverConfig, reconstruct_bb, reconstruct_complementary,
    reconstruct_hybrid, reconstruct_l1_analysis, reconstruct_l1_synthesis, reconstruct_tv,
)
