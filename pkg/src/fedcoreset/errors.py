"""Shared exception types.

Configuration problems (bad hyperparameters, malformed config files) raise
:class:`ConfigurationError`; violations of an operation's runtime contract
(empty dataset, mismatched shapes) raise plain ``ValueError``.
"""


class ConfigurationError(ValueError):
    """A configuration value or combination of values is invalid."""
