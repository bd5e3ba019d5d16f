"""
Base client class for platform service clients.

All service clients follow the same pattern:
- Connect to the service via gRPC
- Exchange Struct messages built from plain dictionaries
- Map gRPC status codes back onto the platform's error classes
"""

import os
from typing import Any, Dict, Optional, Tuple

import grpc
from google.protobuf import json_format, struct_pb2

from ..errors import error_for_status

DEFAULT_SERVICE_URL = "localhost:50061"

# Matches the server limit in services.shared.server.
MAX_MESSAGE_BYTES = 32 * 1024 * 1024


class BaseClient:
    """
    Base class for all platform service clients.

    Provides common functionality for:
    - gRPC channel management
    - Service metadata
    - Struct conversion and error mapping
    """

    def __init__(self, service_name: str, target: Optional[str] = None):
        """
        Initialize a service client.

        Args:
            service_name: Fully qualified gRPC service name
            target: Optional explicit address. If not provided, checks the
                FACTORIAL_SERVICE_URL environment variable, then defaults to
                "localhost:50061"
        """
        self.service_name = service_name
        self.target = target or os.getenv("FACTORIAL_SERVICE_URL", DEFAULT_SERVICE_URL)

        options = [("grpc.max_receive_message_length", MAX_MESSAGE_BYTES)]
        # Use insecure channel for localhost/testing, secure for production
        if self.target.startswith("localhost") or self.target.startswith("127.0.0.1"):
            self._channel = grpc.insecure_channel(self.target, options=options)
        else:
            credentials = grpc.ssl_channel_credentials()
            self._channel = grpc.secure_channel(self.target, credentials, options=options)

        self._metadata: Tuple[Tuple[str, str], ...] = (
            ("x-target-service", service_name),
        )

    @property
    def metadata(self) -> Tuple[Tuple[str, str], ...]:
        """Get service routing metadata."""
        return self._metadata

    def call(self, method: str, body: Dict[str, Any], timeout: Optional[float] = None) -> Dict[str, Any]:
        """
        Invoke a unary RPC with a dictionary body.

        Raises:
            FactorialError: the platform error matching the returned status
        """
        rpc = self._channel.unary_unary(
            f"/{self.service_name}/{method}",
            request_serializer=struct_pb2.Struct.SerializeToString,
            response_deserializer=struct_pb2.Struct.FromString,
        )
        request = struct_pb2.Struct()
        json_format.ParseDict(body, request)
        try:
            response = rpc(request, metadata=self.metadata, timeout=timeout)
        except grpc.RpcError as exc:
            raise error_for_status(exc.code(), exc.details()) from exc
        return json_format.MessageToDict(response)

    def close(self) -> None:
        self._channel.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()
