"""gRPC services of the Factorial Platform."""
