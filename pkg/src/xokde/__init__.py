"""Online multivariate kernel density estimation with Gaussian mixtures."""

from .bandwidth import BandwidthState, BandwidthUnavailable, estimate_bandwidth
from .classifier import ClassifierModel
from .engine import CompressionTrigger, SampleModel, local_error
from .gauss import (
    GaussianComponent,
    SingularCovarianceError,
    WhiteningTransform,
    correct_covariance,
    factorize,
    log_density,
    whitening_from,
)
from .mixture import (
    Mixture,
    goldberger_split,
    hellinger,
    moment_match,
    principal_split,
    sigma_points,
    whole_model_gaussian,
)

__version__ = "0.1.0"
