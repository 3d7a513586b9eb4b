"""Exception hierarchy shared by every module.

Each error carries a short machine-readable ``code`` so the CLI can emit a
structured error object without string matching.
"""


class PolystabError(Exception):
    code = "error"

    def to_dict(self):
        return {"error": self.code, "message": str(self)}


class MalformedDocument(PolystabError):
    code = "malformed_document"


class UnboundedPolytope(PolystabError):
    code = "unbounded_polytope"


class EmptyInterior(PolystabError):
    code = "empty_interior"


class NonPrimitiveNormal(PolystabError):
    code = "non_primitive_normal"

    def __init__(self, index, normal):
        super().__init__(f"facet {index}: normal {tuple(normal)} is not primitive")
        self.index = index


class ResolutionTooSmall(PolystabError):
    code = "resolution_too_small"


class DegreeUnsupported(PolystabError):
    code = "degree_unsupported"


class SingularMomentMatrix(PolystabError):
    code = "singular_moment_matrix"


class NodeEvaluationFailure(PolystabError):
    code = "node_evaluation_failure"


class NonConvexPotential(PolystabError):
    code = "non_convex_potential"


class DegenerateNodeSet(PolystabError):
    code = "degenerate_node_set"


class SolverDiverged(PolystabError):
    code = "solver_diverged"


class InfeasibleStart(PolystabError):
    code = "infeasible_start"


class CertificateFailure(PolystabError):
    code = "certificate_failure"


class CreaseResolutionFailure(PolystabError):
    code = "crease_resolution_failure"


class NotUnstable(PolystabError):
    code = "not_unstable"


class NonConvexStart(PolystabError):
    code = "non_convex_start"


class ZeroWeightEndpoint(PolystabError):
    code = "zero_weight_endpoint"


class StepRejected(PolystabError):
    code = "step_rejected"

    def __init__(self, message, suggested_dt):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class ConvexityLoss(PolystabError):
    code = "convexity_loss"


class BlowUpDetected(PolystabError):
    code = "blow_up_detected"
