"""Point-defect lattice statics with multipole far-field boundary conditions."""

__version__ = "0.1.0"
