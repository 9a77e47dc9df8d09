"""nadex: temporal knowledge graph extrapolation by conditional denoising.

Given a query (subject, relation, ?, time) and the subject's recent event
history, a transformer denoiser recovers the target entity embedding from
Gaussian noise and scores every entity against it. Training combines a
cross-entropy reconstruction term with a cosine penalty that pushes
denoised outputs away from batch-wise negative prototypes.
"""

__version__ = "0.1.0"
