# x >= 1 and x <= 0: no feasible point
from scipy.optimize import linprog

res = linprog(c=[1], A_ub=[[-1], [1]], b_ub=[-1, 0], bounds=[(None, None)], method="highs")
print(f"status: {res.status} {res.message}")
if res.status == 0:
    print(f"RESULT: {res.fun}")
