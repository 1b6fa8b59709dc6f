"""belieftrack: differentiable nonparametric belief propagation for tracking
articulated structures in image sequences.

The package couples a particle-based message passing engine over a pairwise
Markov random field with small learnable potential networks, trained end to
end by maximizing the estimated belief density at ground-truth keypoints.
"""

__version__ = "0.1.0"
