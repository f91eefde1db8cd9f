"""Critical dissipative SQG on bounded planar domains."""
__version__ = "0.1.0"
