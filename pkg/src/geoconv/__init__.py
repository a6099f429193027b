"""Rank-based ES and PBIL with ODE-method certificates of geometric convergence."""

from .algorithms import (
    ES_FIXED,
    ES_FULL,
    PBIL,
    PBIL_1D,
    AlgorithmSpec,
    EsState,
    PbilState,
    es_step,
    pbil_step,
    run_ensemble,
    run_trajectory,
    trial_rng,
)
from .certificates import CertificateBundle, PsiFunction, dini_check, es_certificate, pbil_certificate
from .errors import CertificateFailure, ConfigurationError, DomainExitError, InputError
from .flow import StepSchedule, integrate_flow
from .rates import convergence_rate, lower_rate, rate_report
from .ranking import WeightScheme, assign_weights, utility_bin, utility_tri

__version__ = "0.1.0"
