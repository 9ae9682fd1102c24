"""Exceptions raised by the numerical core."""


class SimulationError(Exception):
    pass


class GridError(SimulationError, ValueError):
    """A grid, knot or level argument violates its contract."""
    pass


class PolicyError(SimulationError, ValueError):
    """A policy kind or family does not fit the operation it was handed to."""
    pass


class LookaheadError(SimulationError):
    """A coefficient or control law tried to read a path beyond time t."""
    pass


class NumericalAbort(SimulationError):
    """Thrown when a coefficient, payoff or weight stops being finite or bounded.

    The step index and the first offending path index are kept so that the
    experiment layer can report where a Monte Carlo run died.
    """

    def __init__(self, message, step=None, path=None):
        self.message = message
        self.step = step
        self.path = path
        super().__init__(self._describe())

    def _describe(self):
        where = []
        if self.step is not None:
            where.append(f'step {self.step}')
        if self.path is not None:
            where.append(f'path {self.path}')
        return f"{self.message} ({', '.join(where)})" if where else self.message

    def shifted(self, offset):
        """Return a copy whose path index is relative to a larger batch."""
        path = None if self.path is None else self.path + offset
        return NumericalAbort(self.message, step=self.step, path=path)


class CflViolation(SimulationError, ValueError):
    def __init__(self, n_t, required_n_t):
        self.n_t = n_t
        self.required_n_t = required_n_t
        super().__init__(
            f'explicit scheme is unstable with n_t={n_t}; '
            f'the CFL bound needs n_t >= {required_n_t}'
        )
