"""privdual: differentially private query release that also protects the
privacy of the analysts asking the queries.

Layout mirrors the pipeline: ``measures`` (weight vectors, projection,
sampling), ``queries`` (universe, databases, workloads), ``dp`` (Laplace,
sparse vector, composition, MW release), ``game`` (zero-sum self-play),
``offline`` (batch mechanisms), ``online`` (fixed-sequence mechanism),
``audit`` and ``harness`` (experiments, empirical privacy probe), ``cli``.
"""

__version__ = "0.1.0"
