"""Shape-adaptive UAV powerline tracking by Phugoid/catenary frequency matching."""

__version__ = "0.1.0"
