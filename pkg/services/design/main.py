"""
Design Service - Main entry point.

Serves factorial analysis and planning over gRPC.
"""

import logging
import os

from services.shared.server import create_grpc_server, run_service, get_service_port
from services.design.service import DesignService


def main():
    """Run the Design Service server."""
    logging.basicConfig(level=os.getenv("FACTORIAL_LOG_LEVEL", "WARNING").upper())
    service_name = "design"
    port = get_service_port(service_name)

    servicer = DesignService()
    server, port = create_grpc_server(
        servicer=servicer,
        port=port,
        service_name=service_name
    )

    run_service(server, service_name, port)


if __name__ == "__main__":
    main()
