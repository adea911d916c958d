# maximize x + y  s.t.  x <= 2, y <= 3, x, y >= 0
from scipy.optimize import linprog

res = linprog(c=[-1, -1], bounds=[(0, 2), (0, 3)], method="highs")
print(f"status: {res.status} {res.message}")
if res.status == 0:
    print(f"RESULT: {-res.fun}")
