"""tomopet: 2D PET simulation, MLEM reconstruction, and UQ aggregation."""

from .errors import (DataError, FormatError, SimulationError, TomopetError,
                     ValidationError)
from .events import (CoincidenceEvent, EventKind, ListModeSet, SimConfig,
                     Sinogram, bin_to_sinogram, hg_pdf, sample_acollinear_pair,
                     sample_emission, sample_hg_deflection, simulate_scan)
from .geometry import CrystalId, Lor, Scanner, ScannerConfig, build_scanner
from .losses import (LossWeights, combine_objective, consistency_loss,
                     diversity_loss, first_moment_loss)
from .mlem import MlemConfig, mlem_reconstruct, mlem_step, poisson_loglik
from .phantom import (ActivityMap, DatasetManifest, ManifestEntry,
                      PhantomVolume, load_image, load_manifest,
                      make_synthetic_phantom, save_image, save_manifest,
                      slice_event_budget)
from .radon import (RadonOperator, RadonSpec, default_radon_spec,
                    radon_adjoint, radon_forward)
from .sysmat import (SystemMatrix, back_project, build_system_matrix,
                     forward_project, sensitivity)
from .uq import (PosteriorSampleSet, UqMap, load_psmp, psnr, render_png,
                 sample_mean, sample_variance, save_psmp, ssim)

__version__ = "0.1.0"
