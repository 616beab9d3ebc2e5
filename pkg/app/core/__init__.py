"""
Numerical library: distributions and channels, information measures,
mechanisms, the neural networks and the adversarial game, evaluation,
exact oracles for tiny instances, and dataset construction.
"""
