"""
Adversarial location obfuscation.

Trains a noise generator against an identity classifier so that reported
locations leak as little mutual information about the user as possible
under an expected-distortion budget, and evaluates the result against the
planar Laplace mechanism and exact optima of small instances.
"""

__version__ = "1.0.0"
