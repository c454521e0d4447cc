"""mailbench: concurrent-action imitation + actor-critic workbench.

A small, dependency-light stack for studying multi-action policies on a
grid arena: a factored Bernoulli action head that can press any subset of
keys at once, an advantage actor-critic trainer with an expert-imitation
auxiliary loss, scripted and human demonstration tooling, and a websocket
bridge for browser play.
"""

__version__ = "0.1.0"
