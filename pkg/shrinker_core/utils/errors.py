"""
Error Types - Exceptions raised by the geometry, mesh and solver stages
"""
from typing import List, Optional

import numpy as np


class ShrinkerError(Exception):
    """Base class for every failure the library reports"""


class InvalidParameterError(ShrinkerError, ValueError):
    """A parameter is outside the admissible range of an operation"""


class OffSurfaceError(ShrinkerError):
    """A point does not lie on the Scherk surface"""


class PunctureProximityError(ShrinkerError):
    """A sphere point lies inside (or on) one of the four punctures"""


class ChartDegeneracyError(ShrinkerError):
    """The (x, z) chart was used where it degenerates"""


class DegenerateMeshError(ShrinkerError):
    """A triangle is too thin to assemble"""


class InfeasibleMeshError(ShrinkerError):
    """The requested punctured sphere cannot be meshed"""


class SymmetryClassError(ShrinkerError):
    """A field is not in the symmetry class an operation requires"""


class OutOfDomainError(ShrinkerError):
    """The graph function leaves the domain where Id - hA is invertible"""

    def __init__(self, message: str, node: int, iterate: Optional[np.ndarray] = None):
        super().__init__(message)
        self.node = node
        self.iterate = iterate


class SingularOperatorError(ShrinkerError):
    """The linearized operator has (numerically) nontrivial kernel"""


class EigenSolverError(ShrinkerError):
    """The sparse eigensolver did not converge"""

    def __init__(self, message: str, iterations: Optional[int] = None):
        super().__init__(message)
        self.iterations = iterations


class NonConvergenceError(ShrinkerError):
    """Newton iteration stopped before reaching the tolerance"""

    def __init__(self, message: str, history: List[float], iterate: Optional[np.ndarray] = None):
        super().__init__(message)
        self.history = list(history)
        self.iterate = iterate


class ReflectionMismatchError(ShrinkerError):
    """Fundamental-domain copies disagree across a mirror plane"""


class MeshIOError(ShrinkerError):
    """A mesh file or its sidecar could not be read or written"""
