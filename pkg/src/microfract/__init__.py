"""microfract: finite-depth dyadic constructions for fractal geometry.

Modules
-------
seq          binary words, balanced (Sturmian/Beatty) sequence programs
dyadic       dyadic-cube set representations, Hausdorff metric, zooming
dims         covering/packing counts and box-dimension slope estimators
realize      cylinder-oracle value maps, block coding, gallery assembly
percolation  coupled fractal percolation with per-generation retention
families     ball-tree families of compact subsets of a metric net
cli          experiment runner
"""

__version__ = "0.1.0"
