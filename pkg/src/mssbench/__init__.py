"""Benchmark toolkit for source separation of classical ensembles."""
from .audio_io import AudioBuffer, read_wav, write_wav

__all__ = ["AudioBuffer", "read_wav", "write_wav"]
__version__ = "0.1.0"
