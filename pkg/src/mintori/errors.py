"""Exception taxonomy shared across the package.

Every failure mode named by an operation contract gets its own class so
callers (and the CLI exit-code mapping) can tell them apart.
"""

from __future__ import annotations


class MintoriError(Exception):
    """Base class for all package errors."""


class DegenerateInputError(MintoriError):
    """Input is degenerate (zero vector, empty grid, ...)."""


class ContractViolationError(MintoriError):
    """Operands violate an operation precondition (e.g. mismatched base points)."""


class RegularityError(MintoriError):
    """Evaluation at a point where the torus action is rank-deficient
    (endpoint fibers, fixed loci) and the requested quantity is undefined."""


class MembershipError(MintoriError):
    """Point fails a set-membership invariant (e.g. off the zero set Z)."""


class AdmissibilityError(MintoriError):
    """Weight vector fails the line-misses-faces admissibility test."""


class WitnessNotFoundError(MintoriError):
    """No Killing field of non-constant length was found for the subtorus.
    Reported, not fatal: some admissible weights genuinely have none."""


class SingularFieldError(MintoriError):
    """The defining form vanishes on the horizontal line, so the
    characteristic field is undefined (model violation off K_i)."""


class DriftBudgetError(MintoriError):
    """Conserved-quantity drift exceeded the integration budget."""


class NoReturnError(MintoriError):
    """Trajectory failed to return to the R-orbit within the step budget."""


class BracketError(MintoriError):
    """Root bracket for the holonomy target has no sign change."""


class ClosureError(MintoriError):
    """A nominally periodic orbit failed the closure verification."""


class RefinementError(MintoriError):
    """Root refinement converged to a point failing verification."""


class DegenerateMeshError(MintoriError):
    """Mesh tangents are linearly dependent beyond the condition bound."""


class ResolutionError(MintoriError):
    """Mesh resolution too coarse for a stable defect estimate."""


class ConfigError(MintoriError):
    """Malformed or inconsistent run configuration."""
