"""
robustadp/errors.py
Exception hierarchy shared by all robustadp modules.

The CLI maps these onto exit codes (see robustadp/__main__.py).
"""

from __future__ import annotations
from typing import Any


class RobustAdpError(Exception):
    """Base class for every error raised by robustadp."""


# ── Model / input errors ──────────────────────────────────────────────

class ModelValidationError(RobustAdpError):
    """A RobustMdp failed validation. Carries the list of violations."""

    def __init__(self, violations: list[Any]) -> None:
        self.violations = list(violations)
        lines = "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(f"model has {len(self.violations)} violation(s):\n{lines}")


class ModelFormatError(RobustAdpError):
    """Malformed model, feature or kernel file."""


class ConfigError(RobustAdpError):
    """Bad run or experiment configuration."""


class SelectorError(RobustAdpError):
    """A nominal selector is undefined for an uncertainty-set variant."""


class DimensionError(RobustAdpError, ValueError):
    """Vector or matrix shapes do not agree."""


class InfeasibleSetError(RobustAdpError, ValueError):
    """An interval box has an empty intersection with the simplex."""


class SupportTooLargeError(RobustAdpError):
    """Vertex enumeration refused because the support is too large."""


class EmptyVertexListError(RobustAdpError, ValueError):
    """A vertex uncertainty set lists no distributions."""


class PriceDataError(RobustAdpError):
    """A price ratio matches neither the up nor the down factor."""

    def __init__(self, path: int, step: int, ratio: float) -> None:
        self.path = path
        self.step = step
        self.ratio = ratio
        super().__init__(
            f"price ratio {ratio!r} at path {path}, step {step} matches neither factor"
        )


class ArtifactExistsError(RobustAdpError):
    """An output artifact already exists and overwriting was not requested."""


# ── Solver errors ─────────────────────────────────────────────────────

class NonConvergenceError(RobustAdpError):
    """An iteration hit its iteration cap before reaching the tolerance."""

    def __init__(self, iterations: int, residual: float, what: str = "iteration") -> None:
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"{what} did not converge after {iterations} iterations "
            f"(last residual {residual:.3e})"
        )


class DivergenceError(RobustAdpError):
    """Weight iterates blew up (sup norm above the divergence threshold)."""

    def __init__(self, iteration: int, norm: float, outer_index: int | None = None) -> None:
        self.iteration = iteration
        self.norm = norm
        self.outer_index = outer_index
        where = f" in outer iteration {outer_index}" if outer_index is not None else ""
        super().__init__(f"weights diverged{where}: |w| = {norm:.3e} at iteration {iteration}")


class PolicyCycleError(RobustAdpError):
    """Robust policy iteration exceeded its improvement bound."""


class ErgodicityError(RobustAdpError):
    """The exploration chain has no unique positive stationary distribution."""


class ImproperKernelError(RobustAdpError):
    """The exploration kernel does not reach a terminal state."""


class UnreachableStateError(RobustAdpError):
    """A state has zero expected visits under the exploration kernel."""


class RankDeficientError(RobustAdpError):
    """A normal-equation matrix is singular or too ill-conditioned."""

    def __init__(self, condition: float) -> None:
        self.condition = condition
        super().__init__(f"matrix is rank deficient (condition number {condition:.3e})")


class AssumptionError(RobustAdpError):
    """The contraction assumption failed and the caller did not force the run."""

    def __init__(self, check: Any) -> None:
        self.check = check
        super().__init__(f"contraction assumption fails: {check}")
