"""Exception taxonomy for numerical failures.

Everything numerical raises a subclass of :class:`TorusForgeError`; plain
usage mistakes (wrong dimensions, bad arguments) raise ``ValueError`` /
``TypeError`` as usual.
"""


class TorusForgeError(Exception):
    """Base class for numerical failures in torusforge."""


class SmallDivisor(TorusForgeError):
    """A retained Fourier mode has a divisor below the hard floor."""

    def __init__(self, message, k=None, divisor=None):
        super().__init__(message)
        self.k = k
        self.divisor = divisor


class ResonantMode(SmallDivisor):
    """Divisor k.alpha below the floor in a constant-coefficient solve."""


class ExactResonance(TorusForgeError):
    """Some k.alpha vanishes exactly on the scanned lattice."""


class NonZeroAverage(TorusForgeError):
    """Right-hand side has a nonzero torus average where none is solvable."""


class NonZeroDiagonalAverage(NonZeroAverage):
    """Diagonal entries of the conjugated matrix data are not average-free."""


class DefectiveMatrix(TorusForgeError):
    """Eigendecomposition is missing or too ill-conditioned to trust."""


class ContractionFailure(TorusForgeError):
    """Fixed-point inversion of a torus map failed to contract."""


class SingularR1(TorusForgeError):
    """The linear normal part of a conjugacy is not invertible on the grid."""


class CompositionDivergence(TorusForgeError):
    """Composition produced a spectral tail above tolerance."""


class TailBlowup(TorusForgeError):
    """Exponential-tail monitor tripped during an iteration."""


class ClassViolation(TorusForgeError):
    """Input field violates the structural class an algorithm relies on."""


class NonInvertibleCounterTermSystem(TorusForgeError):
    """The affine system fixing the counter-term is degenerate."""


class DegenerateTorsion(TorusForgeError):
    """Averaged torsion block fails the nondegeneracy gate."""


class DivergenceDetected(TorusForgeError):
    """Newton residual grew by more than the divergence guard factor."""


class MaxItersExceeded(TorusForgeError):
    """Newton iteration hit the iteration cap before converging."""


class EigenvalueCollision(TorusForgeError):
    """Eigenvalue gap fell below the simplicity threshold."""


class RankDeficientTwist(TorusForgeError):
    """Averaged twist matrix does not have full rank."""


class RootBracketingFailure(TorusForgeError):
    """Could not bracket a sign change for the scalar root-find."""


class NoConvergence(TorusForgeError):
    """Scalar root-find did not reach tolerance."""


class StructurallyExcluded(TorusForgeError):
    """Parameter point excluded by structure (e.g. zero dissipation)."""


class InsufficientData(TorusForgeError):
    """Not enough usable data for the requested diagnostic."""


class WindowTooShort(TorusForgeError):
    """Post-transient window too short for a rotation-number estimate."""


class EscapedNeighborhood(TorusForgeError):
    """Trajectory left the neighborhood of the reference torus."""


class StepTooLarge(TorusForgeError):
    """Integrator diagnostic blew up; reduce the step size."""
