"""Analytical and simulation models of wireless-powered uplink IoT networks."""
__version__ = "0.1.0"
