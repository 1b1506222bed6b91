"""FedAvg width-scaling lab: small MLPs, empirical NTKs and linearized dynamics in numpy."""

__version__ = "0.1.0"
