"""Point configurations with prescribed densities from short-range energies."""

__version__ = "0.1.0"
