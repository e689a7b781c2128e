"""Exception hierarchy."""


class FkpdeError(Exception):
    """Base class for all library errors."""


class ContractError(FkpdeError, ValueError):
    """An operation was called outside its precondition."""


class DomainError(FkpdeError, ValueError):
    """A coefficient is invalid where it was evaluated (e.g. sigma <= 0)."""


class UnsupportedTransformError(FkpdeError):
    """No unit-volatility transform is available for this diffusion."""


class PotentialError(FkpdeError):
    """The supplied potential does not integrate the transformed drift."""


class EaInapplicableError(FkpdeError):
    """The exact algorithm cannot be used for this problem; use debiasing."""


class BoundViolationError(FkpdeError):
    """A user-supplied bound was violated by an evaluated function value."""


class SamplerError(FkpdeError, RuntimeError):
    """A rejection loop hit its hard iteration cap (indicates a bug)."""


class ResourceError(FkpdeError):
    """A draw would need more memory or steps than allowed."""
