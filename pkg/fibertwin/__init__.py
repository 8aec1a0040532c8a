"""Digital twin of a 50-km fiber Mach-Zehnder single-photon interferometer."""

__version__ = "0.1.0"
