"""Exception hierarchy.

Every error carries a short machine-readable ``code`` so the command-line
driver can report failures without parsing messages.
"""


class AnosovLabError(Exception):
    code = "error"


class ModelError(AnosovLabError):
    """Model data violates a construction invariant."""

    code = "invalid_model"


class NewtonDivergence(AnosovLabError):
    code = "newton_divergence"


class DepthTooShallow(AnosovLabError):
    code = "depth_too_shallow"


class CertificationFailed(AnosovLabError):
    code = "certification_failed"

    def __init__(self, message, cell=None, report=None):
        super().__init__(message)
        self.cell = cell
        self.report = report


class DegenerateMatrix(AnosovLabError):
    code = "degenerate_matrix"


class CountMismatch(AnosovLabError):
    code = "count_mismatch"


class ObstructionNonzero(AnosovLabError):
    code = "obstruction_nonzero"

    def __init__(self, message, defect=None):
        super().__init__(message)
        self.defect = defect


class ResidualTooLarge(AnosovLabError):
    code = "residual_too_large"


class LeafTraceFailure(AnosovLabError):
    code = "leaf_trace_failure"


class BranchMismatch(AnosovLabError):
    code = "branch_mismatch"


class PairSeparation(AnosovLabError):
    code = "pair_separation"


class NoConvergence(AnosovLabError):
    code = "no_convergence"


class AnchorMismatch(AnosovLabError):
    code = "anchor_mismatch"
