"""Kernel contextual bandits that maximise the expectation of an unknown function.

The package provides two acquisition estimators over a discrete action grid:

* CBMP-UCB, which models the unknown reward function as a Gaussian process
  and the conditional distribution of intermediate rewards as a Bayesian
  conditional mean embedding, and scores actions with the moment-matched
  mean and standard deviation of their inner product.
* CME-UCB, the conditional mean embedding baseline whose uncertainty depends
  only on the visited contexts and actions.

Simulators for four synthetic settings (A-D), a seeded trial harness and a
small CLI are included.
"""

from cbmp.kernels import Family, KernelSpec, SingularMatrixError

__version__ = "0.1.0"

__all__ = ["Family", "KernelSpec", "SingularMatrixError", "__version__"]
