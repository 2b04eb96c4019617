"""Join-order optimization with classical and quantum reinforcement learning.

A library plus experiment CLI for studying join ordering on synthetic
catalogs: a join-order MDP, PPO with interchangeable classical/quantum
actor and critic, a variational-quantum-circuit statevector simulator,
an exact dynamic-programming cost oracle, and a benchmark harness.
"""

__version__ = "0.1.0"
