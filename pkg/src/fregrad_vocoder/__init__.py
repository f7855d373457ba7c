#!/usr/bin/env python3
"""
FreGrad Vocoder Package

A lightweight diffusion vocoder that generates speech in the Haar wavelet
domain, with training, sampling and evaluation commands.
"""

__version__ = "0.1.0"
__description__ = "Wavelet-domain diffusion vocoder with training and evaluation CLI"

from .cli import cli, main

__all__ = ["cli", "main"]
