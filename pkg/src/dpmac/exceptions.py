class InfeasibleError(RuntimeError):
    """No protocol satisfies the requested constraints."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class CapExhaustedError(InfeasibleError):
    """A search over review lengths hit its cap without success.

    ``diagnostics`` carries ``best_loss`` and ``best_review_len`` (None when
    no candidate was deviation-proof at all).
    """
