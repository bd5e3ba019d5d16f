"""Service clients for platform services."""

from .base import BaseClient
from .design import DesignClient

__all__ = ["BaseClient", "DesignClient"]
