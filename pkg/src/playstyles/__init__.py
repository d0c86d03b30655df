"""Discovery of latent play styles from multiplayer match telemetry.

The pipeline has five file-based stages, each usable as a library or
through the ``playstyles`` CLI:

* :mod:`playstyles.synth`     - synthetic match logs with planted styles
* :mod:`playstyles.ingest`    - parsing, filtering, covariate encoding
* :mod:`playstyles.regress`   - global and per-player regression fits
* :mod:`playstyles.dpcluster` - Dirichlet-process Gibbs clustering of styles
* :mod:`playstyles.analyze`   - model evaluation and cluster/player reports
"""

__version__ = "0.1.0"
