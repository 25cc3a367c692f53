"""Closed forms for the adaptively stepped reaction ODE.

With constant data the lattice problem collapses to the scalar recursion
Y_{j+1} = Y_j + tau_j * Y_j^p with tau_j = tau * Y_j^(1-p), which is solvable
in closed form and serves as the exact oracle for the adaptive-stepping
machinery: Y(t_j) = (1+tau)^j * Y0, with explicit step times and a finite
blow-up time for every tau > 0.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class OdeClosedForm:
    y0: float
    p: float
    tau: float

    def __post_init__(self):
        if not self.y0 > 0:
            raise ValueError("y0 must be positive")
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        if not self.tau > 0:
            raise ValueError("tau must be positive")


def state_at(ode: OdeClosedForm, j: int) -> tuple[float, float]:
    """Exact (t_j, Y_j) after j adaptive steps."""
    if j < 0:
        raise ValueError("step index must be nonnegative")
    q = (1.0 + ode.tau) ** (1.0 - ode.p)
    y = (1.0 + ode.tau) ** j * ode.y0
    t = ode.tau * ode.y0 ** (1.0 - ode.p) * (1.0 - q**j) / (1.0 - q)
    return t, y


def blowup_times(ode: OdeClosedForm) -> tuple[float, float]:
    """Discrete blow-up time T_tau = lim t_j and its continuum limit.

    T_tau decreases to the continuum time as tau -> 0 and always brackets it
    from above.
    """
    q = (1.0 + ode.tau) ** (1.0 - ode.p)
    t_tau = ode.tau * ode.y0 ** (1.0 - ode.p) / (1.0 - q)
    t_cont = ode.y0 ** (1.0 - ode.p) / (ode.p - 1.0)
    return t_tau, t_cont
