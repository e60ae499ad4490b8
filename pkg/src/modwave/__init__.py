"""Modified wave operators for quasilinear waves: asymptotic profiles, backward solves and decay checks."""

__version__ = "0.1.0"
