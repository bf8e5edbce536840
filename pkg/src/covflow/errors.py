"""Shared exception types."""


class InconclusiveError(RuntimeError):
    """Raised when a numerical procedure cannot decide its question.

    Examples: an uncertainty band straddles a decision threshold, a
    decay-rate fit has too few usable points, or a rarity estimate is
    statistically underpowered.  CLI maps this to exit code 2.
    """
