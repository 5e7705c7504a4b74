"""Hamilton-Jacobi verification toolkit for first-order field theories."""
