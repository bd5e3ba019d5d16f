"""Design Service - factorial analysis and planning over gRPC."""
