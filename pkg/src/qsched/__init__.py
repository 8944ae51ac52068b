"""Queue-length based wireless scheduling: simulation, stability checks and Lyapunov potentials."""

__version__ = "0.1.0"
