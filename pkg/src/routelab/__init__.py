"""Traffic-engineering lab: learned intradomain routing.

Flow-network simulation, an LP optimality oracle, softmin routing translation,
graph-network policies with a built-in autodiff engine, and a clipped
policy-gradient trainer, all behind one CLI.
"""

__version__ = "0.1.0"
