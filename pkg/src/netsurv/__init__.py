"""Net survival estimation and group comparison when the excess and
population mortality times are linked by an Archimedean survival copula."""

from netsurv.cohort import Cohort, CohortError, PatientRecord, load_cohort
from netsurv.copula import CopulaDomainError, CopulaSpec, Family
from netsurv.estimator import (Mesh, NetSurvivalFit, SolverConfig, SolverError, bootstrap_se,
                               build_mesh, fit, fit_generalized, fit_pohar_perme)
from netsurv.inference import LogRankResult, chi2_sf, logrank_observable, logrank_oracle
from netsurv.lifetable import (Demographics, RateTable, RateTableError, load_rate_table,
                               synthetic_rate_table)

__version__ = "0.1.0"

__all__ = [
    "Cohort", "CohortError", "PatientRecord", "load_cohort",
    "CopulaDomainError", "CopulaSpec", "Family",
    "Mesh", "NetSurvivalFit", "SolverConfig", "SolverError", "bootstrap_se", "build_mesh",
    "fit", "fit_generalized", "fit_pohar_perme",
    "LogRankResult", "chi2_sf", "logrank_observable", "logrank_oracle",
    "Demographics", "RateTable", "RateTableError", "load_rate_table", "synthetic_rate_table",
]
