"""Simulator and training engine for metasurfaces-integrated neural
networks: an Encoder, a programmable wireless channel (RIS or stacked
metasurface), and a Decoder trained jointly with hand-assembled
analytical channel gradients."""

__version__ = "0.1.0"
