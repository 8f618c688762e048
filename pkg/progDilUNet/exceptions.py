# -*- coding: utf-8 -*-
"""Errors raised by the package."""


class ProgDilUNetError(Exception):
    """Base class, the CLI turns it into exit code 1."""


class ShapeError(ProgDilUNetError, ValueError):
    """Extents that do not fit the operation."""


class LabelError(ProgDilUNetError, ValueError):
    """Label code outside the class range."""


class DomainError(ProgDilUNetError, ValueError):
    """Argument outside the function's domain."""


class ConfigError(ProgDilUNetError):
    """Invalid or infeasible configuration."""


class ConstructionError(ProgDilUNetError):
    """A network spec that cannot be assembled."""


class TrainingFault(ProgDilUNetError):
    """Non finite loss or metric during training."""


class UnsupportedConfiguration(ProgDilUNetError):
    """An analysis asked of a layer stack it is not defined for."""


class FormatError(ProgDilUNetError):
    """Bad magic, version or payload code in a file."""
