"""Exception types shared across the package."""


class SegsearchError(Exception):
    """Base class for all engine errors."""


class ValidationError(SegsearchError):
    """Invalid genome, space, config, or argument (e.g. a bad partition request)."""


class UnsupportedModeError(SegsearchError):
    """Operation not defined for the genome's mode (solver-order genomes are not locally executable)."""


class ProfileError(SegsearchError):
    """Cost profile violates its invariants, misses a branch, or cannot be calibrated."""


class NumericError(SegsearchError):
    """Numerical failure: eigensolver did not converge, or a result left its valid range."""


class InsufficientSamplesError(SegsearchError):
    """Fewer samples than the statistic requires."""


class PairedGenerationError(SegsearchError):
    """Candidate/teacher image sets are not a matched pair (count or shape mismatch)."""


class UndefinedTauError(SegsearchError):
    """Kendall's tau undefined: every pair is tied in one of the inputs."""


class CacheMissError(SegsearchError):
    """A partial step ran without a cached feature for its branch."""


class BudgetError(SegsearchError):
    """No feasible candidate exists (or was found) under the MACs budget."""


class CheckpointError(SegsearchError):
    """Checkpoint file is corrupt or has an incompatible version."""


class BackendError(SegsearchError):
    """External evaluator failed: process died, protocol violation, or version mismatch."""
