"""Coverage-driven scenario generation and checking for a three-lane highway case study."""

__version__ = "0.1.0"
