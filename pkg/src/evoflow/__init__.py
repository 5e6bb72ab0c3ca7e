"""Evolution-assisted training of amortized flow-network samplers.

A population of policy networks is evolved on trajectory-reward fitness,
its trajectories feed a percentile-stratified replay buffer, and a single
gradient-trained sampler learns from mixed online/offline batches under a
flow-matching, detailed-balance, or trajectory-balance objective.  Small
grid and sequence environments plus brute-force oracles keep every
training claim checkable.
"""

__version__ = "0.1.0"
