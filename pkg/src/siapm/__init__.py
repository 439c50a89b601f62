"""Single-ion addressing by confinement modulation: crystal geometry, pulse
synthesis, motional effects and heating-aware randomized benchmarking."""

__version__ = "0.1.0"
