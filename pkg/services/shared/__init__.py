"""Server bootstrap and servicer base shared by the Factorial Platform services."""
