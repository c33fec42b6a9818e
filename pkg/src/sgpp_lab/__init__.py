"""Score-guided proximal projection (SGPP) for rectified flows on exact testbeds."""

__version__ = "0.1.0"
