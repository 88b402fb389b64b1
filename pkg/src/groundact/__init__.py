"""groundact: language -> keypoint -> waypoint skills -> trajectory.

A desk-scale instruction-following manipulation stack: a keypoint grounding
network over RGB, point-cloud waypoint skill policies, parameterized
controllers, an LLM-style skill router, and a kinematic tabletop simulator
that generates all training data and benchmarks.
"""

__version__ = "0.1.0"
