"""Spatially coupled designs and AMP decoding for quantitative group testing and pooled data."""

from .amp import AmpConfig, AmpDivergenceError, AmpResult, quantize, run_columnwise_sc_amp, run_matrix_sc_amp, run_sc_amp_qgt
from .baselines import CvxResult, LpInfeasibleError, cvx_estimate, lp_estimate
from .design import BaseMatrix, DesignPair, build_base_matrix, sample_design, trivial_base_matrix
from .estimators import CVXDecoder, ColumnwiseSCAMPDecoder, LPDecoder, PooledSCAMPDecoder, SCAMPDecoder
from .model import observe_pooled, observe_qgt, sample_pooled_signal, sample_qgt_signal
from .potential import find_argmin_and_stationary, potential_value
from .state_evolution import iterate_cov_se, iterate_scalar_se, mmse_bernoulli

__version__ = "0.1.0"
