"""
Design Service - Business logic layer.

Serves the analysis and planning commands over gRPC. Requests and responses
are ``Struct`` messages: a request holds ``config`` (RunConfig keys) and an
optional ``summary`` (treatment, n, n1 records); a response is the payload the
CLI writes with --json-out.
"""

import logging
from typing import Any, Callable, Dict

import grpc
from google.protobuf import json_format, struct_pb2

from factorial_platform.commands import (
    CommandResult,
    cmd_allocate,
    cmd_analyze,
    cmd_power_curve,
    cmd_sample_size,
)
from factorial_platform.config import RunConfig
from factorial_platform.dataio import summary_from_records, to_plain
from factorial_platform.design import FactorialDesign
from factorial_platform.errors import FactorialError, InputError
from services.shared.servicer_base import BaseServicer, Handler

logger = logging.getLogger(__name__)

SERVICE_NAME = "factorial.design.DesignService"

# Remote callers never read or write files on the service host.
_LOCAL_ONLY_KEYS = ("input", "summary", "population", "json_out", "csv_out")


class DesignService(BaseServicer):
    """
    Implementation of the Design Service.

    Each RPC runs the matching command against the configuration carried in
    the request.
    """

    service_name = SERVICE_NAME

    def __init__(self, base_config: RunConfig = None):
        """
        Initialize Design Service.

        Args:
            base_config: Configuration requests are layered on. If None, reads
                the FACTORIAL_* environment.
        """
        self.base_config = base_config or RunConfig.from_env()

    def methods(self) -> Dict[str, Handler]:
        return {
            "Analyze": self.Analyze,
            "PowerCurve": self.PowerCurve,
            "SampleSize": self.SampleSize,
            "Allocate": self.Allocate,
        }

    def _run(
        self,
        name: str,
        command: Callable[..., CommandResult],
        request: struct_pb2.Struct,
        context: grpc.ServicerContext,
        needs_summary: bool = False,
    ) -> struct_pb2.Struct:
        try:
            body: Dict[str, Any] = json_format.MessageToDict(request)
            overrides = body.get("config") or {}
            blocked = [key for key in _LOCAL_ONLY_KEYS if key in overrides]
            if blocked:
                raise InputError(
                    f"The design service does not accept file settings: {', '.join(blocked)}; "
                    "send the counts in 'summary'"
                )
            config = self.base_config.update(overrides, source="request").validate()

            summary = None
            records = body.get("summary")
            if records:
                design = FactorialDesign(config.factors) if config.factors else None
                summary = summary_from_records(records, design)
            elif needs_summary:
                raise InputError("Request needs a 'summary' with treatment, n and n1 records")

            result = command(config, summary)
            response = struct_pb2.Struct()
            json_format.ParseDict(to_plain(result.payload), response)
            return response

        except FactorialError as e:
            context.set_code(e.status_code)
            context.set_details(str(e))
            return struct_pb2.Struct()
        except Exception as e:
            logger.exception("%s failed", name)
            context.set_code(grpc.StatusCode.INTERNAL)
            context.set_details(f"Failed to run {name}: {str(e)}")
            return struct_pb2.Struct()

    def Analyze(self, request, context):
        """Linear (and requested non-linear) inference for the given summary."""
        return self._run("Analyze", cmd_analyze, request, context, needs_summary=True)

    def PowerCurve(self, request, context):
        return self._run("PowerCurve", cmd_power_curve, request, context)

    def SampleSize(self, request, context):
        return self._run("SampleSize", cmd_sample_size, request, context)

    def Allocate(self, request, context):
        return self._run("Allocate", cmd_allocate, request, context)
