"""Randomized-masking smoothing for raw-byte malware classifiers.

The package is organized around a small pipeline:

    corpus     -- synthetic PE corpora with planted byte patterns + manifests
    pe         -- minimal PE parse/serialize substrate and structural transforms
    masking    -- byte masking, window planning, defense configuration
    classifier -- gated-convolution raw-byte net (numpy, explicit gradients)
    smoothing  -- voting predictors (mask ensemble, chunk ablation, deletion)
                  and exhaustive patch certification
    attacks    -- payload slot construction + (1+1)-EA black-box optimizer
    evaluation -- detection metrics, attack sweeps, temporal decay (AUT)
    cli        -- `byteshield` command-line front end
"""

__version__ = "0.1.0"
