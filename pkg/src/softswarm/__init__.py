"""softswarm: max-entropy multi-agent RL with per-group graph attention.

The package couples a small float64 autodiff substrate (``diffcore``) with a
graph-attention recurrent policy network (``nets``), proximity-graph
neighborhood assembly (``graphs``), desk-scale gridworld environments
(``envs``), max-entropy value-based and actor-critic trainers (``training``),
and a command-line experiment harness (``harness``).
"""

__version__ = "0.1.0"
