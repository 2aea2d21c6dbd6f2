"""
Reduced-basis kriging library.

The modules in this package follow the pipeline of the method:

* ``geometry`` builds knots, bandwidths and the sparse basis matrices.
* ``covariance`` evaluates the Matérn family used to simulate truth fields.
* ``linalg`` holds the sparse/dense kernels (Cholesky, thin QR via the Gram
  matrix, the Woodbury identities).
* ``sre_model`` defines the Spatial Random Effects parameters and the full and
  concentrated log-likelihoods.
* ``estimation`` fits parameters by reduced-basis ML or by EM.
* ``prediction`` computes kriging predictions and standard errors.
* ``simulation`` and ``bench`` reproduce the accuracy-versus-time experiments.
* ``detrend`` removes covariate mean structure before kriging.

File formats shared with the command line live in ``formats`` and the
exception hierarchy in ``errors``.
"""
