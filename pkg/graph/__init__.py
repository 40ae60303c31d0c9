# Graph module for the per-entry convergence study pipeline
