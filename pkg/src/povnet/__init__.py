"""povnet: poverty mapping from call-flow networks.

Builds origin/destination flow matrices from call records at site,
arrondissement, and region resolution; gravity-normalizes them; scores
units with centrality-style measures; correlates the scores with
multidimensional poverty indicators; fits linear headcount/intensity
models; and emits fine-resolution predicted poverty maps. A parallel
path does the same from aggregated per-user behavioral indicators with
night-call home localization.
"""

__version__ = "0.1.0"
