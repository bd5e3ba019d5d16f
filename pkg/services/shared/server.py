"""
Server bootstrap for Factorial Platform services.

Ports come from ``<NAME>_PORT`` or the registry below; servers are plain
threaded gRPC servers with the servicer's generic handlers attached.
"""

import logging
import os
from concurrent import futures
from typing import Optional, Tuple

import grpc

logger = logging.getLogger(__name__)

SERVICE_PORTS = {
    "design": 50061,
}

# Power curves over long grids and simulation payloads exceed the 4 MB default.
MAX_MESSAGE_BYTES = 32 * 1024 * 1024

STOP_GRACE_SECONDS = 5.0


def get_service_port(service_name: str, default_port: Optional[int] = None) -> int:
    """
    Resolve a service's port: ``<NAME>_PORT``, then SERVICE_PORTS, then default_port.

    Raises:
        ValueError: if the environment value is not an integer or no port is known
    """
    env_var = f"{service_name.upper()}_PORT"
    raw = os.getenv(env_var)
    if raw:
        try:
            return int(raw)
        except ValueError:
            raise ValueError(f"{env_var} must be an integer port, got '{raw}'") from None

    port = SERVICE_PORTS.get(service_name, default_port)
    if port is None:
        raise ValueError(
            f"No port known for service '{service_name}'; "
            f"set {env_var} or register it in SERVICE_PORTS"
        )
    return port


def create_grpc_server(
    servicer: "BaseServicer",
    port: Optional[int] = None,
    service_name: Optional[str] = None,
    max_workers: int = 10,
    host: str = "[::]",
) -> Tuple[grpc.Server, int]:
    """
    Build an unstarted server hosting ``servicer``.

    Args:
        servicer: BaseServicer whose handlers are registered
        port: Port to bind; 0 lets the OS choose. Looked up from
            service_name when None
        service_name: Registry name used when port is None
        max_workers: Request threads
        host: Interface to bind

    Returns:
        (server, bound port)
    """
    if port is None:
        if service_name is None:
            raise ValueError("create_grpc_server needs a port or a service_name")
        port = get_service_port(service_name)

    options = [
        ("grpc.max_send_message_length", MAX_MESSAGE_BYTES),
        ("grpc.max_receive_message_length", MAX_MESSAGE_BYTES),
    ]
    server = grpc.server(futures.ThreadPoolExecutor(max_workers=max_workers), options=options)
    servicer.add_to_server(server)
    bound = server.add_insecure_port(f"{host}:{port}")
    if bound == 0:
        raise RuntimeError(f"Could not bind {host}:{port}")
    logger.debug("%s bound to %s:%d", servicer.service_name, host, bound)
    return server, bound


def run_service(server: grpc.Server, service_name: str, port: Optional[int] = None):
    """Start ``server`` and block until Ctrl+C, then stop with a short grace period."""
    if port is None:
        port = get_service_port(service_name)

    server.start()
    print(f"{service_name} service listening on port {port}. Press Ctrl+C to stop.")
    try:
        server.wait_for_termination()
    except KeyboardInterrupt:
        print(f"\nStopping {service_name} service...")
        server.stop(STOP_GRACE_SECONDS).wait()
        print(f"{service_name} service stopped.")
