# 0/1 knapsack, capacity 5, items (weight, value) = (2,3), (3,4), (4,5)
import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

weights = np.array([2, 3, 4])
values = np.array([3, 4, 5])
res = milp(
    c=-values,
    constraints=LinearConstraint(weights[np.newaxis, :], ub=5),
    integrality=np.ones(3),
    bounds=Bounds(0, 1),
)
print(f"status: {res.status} {res.message}")
if res.status == 0:
    print(f"RESULT: {-res.fun}")
