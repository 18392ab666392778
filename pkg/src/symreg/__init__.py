"""Evolutionary symbolic regression with generator-guided candidates.

Subpackages by concern:

- :mod:`symreg.expr` -- equation skeleton DSL (parse, print, evaluate, mutate)
- :mod:`symreg.data` -- dataset loading, validation, train/validation split
- :mod:`symreg.fit` -- parameter fitting and NMSE-based candidate scoring
- :mod:`symreg.context` -- interpreted dataset-analysis directive language
- :mod:`symreg.generate` -- prompt construction and candidate generators
- :mod:`symreg.search` -- the evolutionary loop and the experience buffer
- :mod:`symreg.harness` -- multi-problem benchmark runner and analytics
- :mod:`symreg.cli` -- command-line entry points
"""

__version__ = "0.1.0"
