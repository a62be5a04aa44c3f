"""Synthetic data generators used by the experiments.

``credit_features`` is a three-feature look-alike of a credit scoring table
(revolving utilization, debt ratio, log monthly income), standardized with
the generating distribution's exact moments. ``utilization_1d`` is a
positive, right-skewed scalar feature for the one-dimensional experiments.
"""

import numpy as np
from scipy.stats import beta

from perfcost.measures import EmpiricalMeasure
from perfcost.rng import make_rng, standard_normal

CREDIT_COLUMNS = ("utilization", "debt_ratio", "log_income")

# utilization ~ Beta(a, b); debt ratio ~ LogNormal(mu, s); log income ~ N(m, v)
_UTIL = (0.8, 1.6)
_DEBT = (-1.0, 0.7)
_INCOME = (8.5, 0.6)


def _credit_raw(n, rng):
    util = rng.beta(*_UTIL, size=n)
    debt = np.exp(_DEBT[0] + _DEBT[1] * standard_normal(rng, n))
    # income correlates negatively with utilization
    inc = _INCOME[0] + _INCOME[1] * (0.8 * standard_normal(rng, n) - 0.6 * (util - 0.33) / 0.27)
    return np.column_stack([util, debt, inc])


def _credit_moments():
    a, b = _UTIL
    mu_u = a / (a + b)
    sd_u = np.sqrt(a * b / ((a + b) ** 2 * (a + b + 1)))
    m, s = _DEBT
    mu_d = np.exp(m + s * s / 2)
    sd_d = np.sqrt((np.exp(s * s) - 1) * np.exp(2 * m + s * s))
    mu_i = _INCOME[0] - _INCOME[1] * 0.6 * (mu_u - 0.33) / 0.27
    sd_i = _INCOME[1] * np.sqrt(0.64 + 0.36 * (sd_u / 0.27) ** 2)
    return np.array([mu_u, mu_d, mu_i]), np.array([sd_u, sd_d, sd_i])


def credit_features(n, seed):
    """``(n, 3)`` standardized credit-like features."""
    X = _credit_raw(n, make_rng(seed))
    mu, sd = _credit_moments()
    return (X - mu) / sd


def utilization_1d(n, seed, scale=10.0, offset=0.1):
    """Positive scalar sample ``offset + scale * Beta(2, 5)`` as a measure."""
    x = offset + scale * make_rng(seed).beta(2.0, 5.0, size=n)
    return EmpiricalMeasure(x[:, None])


def utilization_quantiles(q, scale=10.0, offset=0.1):
    return offset + scale * beta.ppf(q, 2.0, 5.0)


def positive_features(n, d, seed, scale=10.0, offset=0.1):
    """``(n, d)`` i.i.d. ``offset + scale * Beta(2, 5)`` coordinates."""
    return offset + scale * make_rng(seed).beta(2.0, 5.0, size=(n, d))
