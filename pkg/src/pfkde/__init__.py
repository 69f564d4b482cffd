"""Particle filtering with kernel density reconstruction of filtering densities.

The package is organised by concern:

* :mod:`pfkde.model`     -- state-space models and trajectory simulation
* :mod:`pfkde.pf_core`   -- bootstrap particle filter with multinomial resampling
* :mod:`pfkde.kernels`   -- smoothing kernels, Fourier transforms and constants
* :mod:`pfkde.kde`       -- kernel density estimates built on particle clouds
* :mod:`pfkde.oracle`    -- Kalman filter and 1-D grid filter references
* :mod:`pfkde.analysis`  -- MISE experiments, Sobolev integrals, error bounds
* :mod:`pfkde.cli`       -- ``pfkde`` command line front end
"""

from pfkde.errors import (
    ConfigError,
    FilterError,
    NumericalError,
    QuadratureError,
    WeightDegeneracyError,
)
from pfkde.rng import make_rng

__all__ = [
    "ConfigError",
    "FilterError",
    "NumericalError",
    "QuadratureError",
    "WeightDegeneracyError",
    "make_rng",
]

__version__ = "0.1.0"
