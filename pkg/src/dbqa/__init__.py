"""Warm-started double-bracket refinement of variational ground states.

Modules: ``qcore`` (dense states and operators), ``hamiltonians``,
``dbi`` (exact double-bracket iterations), ``gci`` (group-commutator
iterations and their unfolding), ``ansatz`` (warm-start circuits and
training), ``compiling`` (gate lowering and QASM), ``cost`` (gate ledgers),
``metrics`` and ``pipeline``/``cli`` (experiment runner).
"""

__version__ = "0.1.0"
