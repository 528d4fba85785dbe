"""Transport with forward-peaked fractional scattering on the half-space."""
__version__ = "0.1.0"

from .sphere_geometry import (Direction, PlanePoint, PoleError, SphereAtlas, cap_bound, lift,
                              one_minus_dot, project, sphere_integrate)
from .fractional import (OrderError, SpectralPlan, bracket_identity_residual,
                         frac_laplacian_quadrature, frac_laplacian_spectral, from_weighted,
                         hs_seminorm, to_weighted)
from .scattering import (ScatteringModel, apply_bounded, apply_full, apply_singular,
                         dissipation, weak_form_oracle)
from .solver import (BoundarySource, CflError, PhaseState, SpatialGrid, StepReport,
                     StiffnessError, scattering_step, strang_step, transport_step)
from .diagnostics import (RunLedger, decay_fit, embedding_check, energy_ledger_check,
                          fourier_gain_probe, mass_ledger_check)
from .config import RunConfig, parse_config, serialize_config
from .runner import run
