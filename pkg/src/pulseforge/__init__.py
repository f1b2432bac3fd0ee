"""pulseforge: dynamical-decoupling sequence design and trapped-ion simulation."""

__version__ = "0.1.0"
