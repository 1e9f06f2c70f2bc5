"""Monte Carlo laboratory for finite-point motions of coalescing Brownian flows with drift."""

__version__ = "0.1.0"

from .errors import ConfigurationError, DomainError
from .rng import RngStream, StreamBatch
from .paths import (TimeGrid, DriftSpec, make_grid, sample_wiener, sample_bridge, bridge_from_wiener,
                    wiener_from_bridge, pin, sample_free_paths, sample_drifted_flow)
from .coalesce import (CoalescedBundle, Scheme, SchemeReplay, IndexSet, coalesce_bundle, coalesce_paths,
                       pairwise_meeting_times, extract_scheme, enumerate_schemes, scheme_replay,
                       index_slice, index_slice2)
from .girsanov import LogWeight, ito_sum_left, flow_logweight, bridge_logweight, lemma5_constants
from .stats import MCEstimate, DensityEstimate, ReportRow, CheckReport, compare
from .estimators import (gaussian_density, thm1_rhs, thm1_lhs_binned, SchemeTarget, CountTarget,
                         density_direct, density_girsanov, density_thm2, QLSample, ql_sample,
                         ql_samples, density_thm4)
from .checks import (coalescence_probability, coalescence_oracle, bridge_hitting_oracle,
                     coalescence_refinement, bridge_hitting_refinement, lemma7_check, lemma8_check,
                     thm3_monotonicity, lemma5_check, lemma6_mismatch, tie_frequency)
