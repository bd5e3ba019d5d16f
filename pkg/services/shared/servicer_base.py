"""
Base class for service servicers.

Services exchange ``google.protobuf.Struct`` messages, so they are registered
through generic method handlers instead of generated stubs.
"""

from abc import ABC, abstractmethod
from typing import Callable, Dict

import grpc
from google.protobuf import struct_pb2

Handler = Callable[[struct_pb2.Struct, grpc.ServicerContext], struct_pb2.Struct]


class BaseServicer(ABC):
    """
    Base class for platform service servicers.

    Subclasses name their fully qualified gRPC service and return their
    unary methods from :meth:`methods`.
    """

    service_name: str = ""

    @abstractmethod
    def methods(self) -> Dict[str, Handler]:
        """Map RPC method names to handlers taking and returning a Struct."""

    def add_to_server(self, server: grpc.Server):
        """
        Add this servicer to a gRPC server.

        Args:
            server: gRPC server instance
        """
        handlers = {
            name: grpc.unary_unary_rpc_method_handler(
                handler,
                request_deserializer=struct_pb2.Struct.FromString,
                response_serializer=struct_pb2.Struct.SerializeToString,
            )
            for name, handler in self.methods().items()
        }
        server.add_generic_rpc_handlers(
            (grpc.method_handlers_generic_handler(self.service_name, handlers),)
        )
