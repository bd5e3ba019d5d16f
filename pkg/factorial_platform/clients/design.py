"""
Design Service client.

Runs analysis and planning commands on a remote design service.
"""

from typing import Any, Dict, List, Optional

from ..estimation import GroupSummary
from .base import BaseClient

SERVICE_NAME = "factorial.design.DesignService"


def _summary_records(summary: Optional[GroupSummary]) -> Optional[List[Dict[str, int]]]:
    if summary is None:
        return None
    return [
        {"treatment": j, "n": n, "n1": n1}
        for j, (n, n1) in enumerate(zip(summary.n, summary.n1), start=1)
    ]


class DesignClient(BaseClient):
    """
    Client for the Design Service.

    Example:
        with DesignClient("localhost:50061") as client:
            result = client.analyze(summary, {"factors": ["R", "G", "I"]})
            result["linear"]["effects"][0]["estimate"]     # 0.1875
    """

    def __init__(self, target: Optional[str] = None):
        super().__init__(SERVICE_NAME, target)

    def _request(
        self,
        method: str,
        config: Optional[Dict[str, Any]],
        summary: Optional[GroupSummary],
    ) -> Dict[str, Any]:
        body: Dict[str, Any] = {"config": dict(config or {})}
        if summary is not None:
            body["summary"] = _summary_records(summary)
            body["config"].setdefault("factors", list(summary.design.factor_names))
        return self.call(method, body)

    def analyze(self, summary: GroupSummary, config: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """
        Analyze observed counts.

        Args:
            summary: Per-treatment counts
            config: RunConfig keys such as alpha, correction or estimands

        Returns:
            The analyze payload (config, summary, mean, linear and any
            non-linear tables)
        """
        return self._request("Analyze", config, summary)

    def power_curve(
        self, config: Dict[str, Any], summary: Optional[GroupSummary] = None
    ) -> Dict[str, Any]:
        """Power curve; variances come from ``summary`` or the config's proportions."""
        return self._request("PowerCurve", config, summary)

    def sample_size(
        self, config: Dict[str, Any], summary: Optional[GroupSummary] = None
    ) -> Dict[str, Any]:
        return self._request("SampleSize", config, summary)

    def allocate(
        self, config: Dict[str, Any], summary: Optional[GroupSummary] = None
    ) -> Dict[str, Any]:
        return self._request("Allocate", config, summary)
