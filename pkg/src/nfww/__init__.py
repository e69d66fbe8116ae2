"""Birkhoff and Kodama normal forms for counter-propagating long waves.

Exact layer: :mod:`nfww.diffpoly`, :mod:`nfww.normalform`, :mod:`nfww.kodama`.
Numerical layer: :mod:`nfww.evalplan`, :mod:`nfww.solver`.
"""

__version__ = "0.1.0"
