"""Check the identifiability conditions for a small structural matrix.

Three attributes with prerequisites 1 -> 2 and 1 -> 3, seven items.  The
full matrix satisfies every condition; dropping the last item leaves
attribute 3 measured by too few items.
"""

import json

import numpy as np

from hlam import check_identifiability
from hlam.hierarchy import validate
from hlam.identifiability import operation_b, operation_c

Q = np.array([
    [1, 0, 0], [0, 1, 0], [0, 0, 1],
    [1, 1, 0], [0, 1, 1], [0, 1, 1], [1, 0, 1],
], dtype=np.uint8)
h = validate([(1, 2), (1, 3)], 3, one_based=True)

report = check_identifiability(Q, h)
print(json.dumps(report.to_dict(), indent=2))

print("after filling in prerequisites:\n", operation_b(Q[3:], h))
print("after clearing prerequisites:\n", operation_c(Q[3:], h))

short = check_identifiability(Q[:6], h)
print("without the last item, sufficient conditions hold:", short.part_i_sufficient)
