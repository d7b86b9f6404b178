"""Exception hierarchy for the dampc package."""


class DampcError(Exception):
    """Base class for all package-specific errors."""


# --- solver substrate ---

class SolverError(DampcError):
    pass


class Infeasible(SolverError):
    """The optimization problem has an empty feasible set."""


class Unbounded(SolverError):
    """The objective is unbounded over the feasible set."""


class NumericalFailure(SolverError):
    """The solver terminated without a certificate of optimality."""


class DimensionTooLarge(DampcError):
    """Explicit enumeration was requested above the dimension cap."""


# --- configuration / model ---

class ConfigError(DampcError):
    pass


class ParseError(ConfigError):
    """The configuration file is not valid JSON."""


class SchemaError(ConfigError):
    """The configuration violates the documented schema."""


class DimensionMismatch(ConfigError):
    """Cross-referenced dimensions in the configuration disagree."""


class IndefiniteCostMatrix(ConfigError):
    """A cost matrix is not symmetric positive definite."""


class InvalidChain(ConfigError):
    """The mass-spring-damper builder received an inconsistent chain."""


class DisturbanceOutsideW(DampcError):
    """A disturbance sample violates the declared disturbance set."""


# --- offline design ---

class UnboundedSupport(DampcError):
    """A support value is unbounded (the polytope is not compact)."""


class UnstructuredRow(DampcError):
    """A parameter constraint row mixes parameters with no common agent."""


class TerminalSetNotInvariant(DampcError):
    """Strict-mode terminal set validation failed."""


# --- identification ---

class MissingAxisBound(ConfigError):
    """Distributed identification requires axis-aligned bounds per parameter."""


class EmptyIntersection(DampcError):
    """Set-membership update produced an empty parameter set."""


class ProjectionInfeasible(DampcError):
    """Projection onto the feasible parameter set failed."""


class IdentificationFault(DampcError):
    """Identification aborted a closed-loop run."""


# --- controller ---

class DesignMismatch(DampcError):
    """Tube design dimensions do not match the network model."""


class EmptyParamSet(DampcError):
    """A subproblem was requested for an empty parameter set."""


class LocalInfeasible(DampcError):
    """A local MPC subproblem is infeasible."""

    def __init__(self, agent_id, detail=""):
        self.agent_id = agent_id
        super().__init__(f"agent {agent_id}: local subproblem infeasible. {detail}".strip())


class NoConvergence(DampcError):
    """Consensus iterations hit the cap without meeting the tolerance."""

    def __init__(self, primal_residual, dual_residual, iterations):
        self.primal_residual = primal_residual
        self.dual_residual = dual_residual
        self.iterations = iterations
        super().__init__(
            f"no convergence after {iterations} iterations "
            f"(primal {primal_residual:.3e}, dual {dual_residual:.3e})"
        )


# --- simulation ---

class InfeasibleAtStep(DampcError):
    """The MPC problem became infeasible during a closed-loop run."""

    def __init__(self, step, detail=""):
        self.step = step
        super().__init__(f"MPC infeasible at step {step}. {detail}".strip())
