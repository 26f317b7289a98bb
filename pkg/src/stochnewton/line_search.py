"""Backtracking line search over dyadic step lengths.

Trial step lengths are 1, 1/2, ..., 2**-max_halvings, accepted on a
sufficient-decrease test with constant ``c``. The defaults (c = 0.95,
five trial lengths) are deliberately strict; both are configurable.
"""

import numpy as np

from .objectives import NumericalError

__all__ = ["armijo_backtrack"]

DEFAULT_SUFFICIENT_DECREASE = 0.95
DEFAULT_MAX_HALVINGS = 4


def armijo_backtrack(h, theta0, v, m, c=DEFAULT_SUFFICIENT_DECREASE,
                     max_halvings=DEFAULT_MAX_HALVINGS):
    """First dyadic step length lam with h(theta0 + lam*v) - h(theta0) <= c*lam*<v, m>.

    ``h`` is the (batch) objective, ``v`` the search direction, ``m`` the
    gradient of h at theta0. Candidates lam = 2**-k are tried for
    k = 0..max_halvings in order; if none passes, the last candidate is
    returned. h(theta0) is evaluated exactly once and at most
    max_halvings + 1 further evaluations are made.
    """
    theta0 = np.asarray(theta0, dtype=float)
    v = np.asarray(v, dtype=float)
    h0 = float(h(theta0))
    if not np.isfinite(h0):
        raise NumericalError("objective is non-finite at the line-search origin", theta=theta0)
    slope = float(np.dot(v, m))
    lam = 1.0
    for k in range(max_halvings + 1):
        lam = 2.0 ** (-k)
        trial_point = theta0 + lam * v
        trial = float(h(trial_point))
        if not np.isfinite(trial):
            raise NumericalError(
                f"objective is non-finite at trial step length {lam}", theta=trial_point
            )
        if trial - h0 <= c * lam * slope:
            return lam
    return lam
