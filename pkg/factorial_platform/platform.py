"""
FactorialPlatform - remote entry point

Gives access to the design service through a single object.
"""

import os
from typing import Optional

from .clients.base import DEFAULT_SERVICE_URL
from .clients.design import DesignClient


class FactorialPlatform:
    """
    Lazy-initialized access to platform services.

    The design client is created on first access, so constructing the
    platform opens no connection.

    Example:
        platform = FactorialPlatform()
        result = platform.design.analyze(summary, {"correction": "bonferroni"})
    """

    def __init__(self, service_url: Optional[str] = None):
        """
        Args:
            service_url: Optional explicit address. If not provided, checks
                FACTORIAL_SERVICE_URL, then defaults to "localhost:50061"
        """
        self.service_url = service_url or os.getenv("FACTORIAL_SERVICE_URL", DEFAULT_SERVICE_URL)
        self._design: Optional[DesignClient] = None

    @property
    def design(self) -> DesignClient:
        """Access the Design Service client."""
        if self._design is None:
            self._design = DesignClient(self.service_url)
        return self._design

    def close(self) -> None:
        if self._design is not None:
            self._design.close()
            self._design = None
