"""Data-driven tube MPC with zonotopic model sets.

Modules: ``setalg`` (set algebra), ``ident`` (learning the model set),
``synth`` (tube and terminal ingredients), ``ocp`` and ``qp`` (the online
problem and its solver), ``simloop`` (closed-loop simulation) and ``cli``.
"""

__version__ = "0.1.0"
