"""Logic-specified multi-objective Q-learning.

Specs are strings such as ``"o1 & ( o2 | -o3 )"`` or ``Spec`` objects from
``parse``. Actions are integers: 0 up, 1 down, 2 left, 3 right.
"""

from ._core import *  # noqa: F401,F403
from ._core import __doc__  # noqa: F401
