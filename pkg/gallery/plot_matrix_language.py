"""
Writing and running matrix programs
===================================

Programs are lists of assignments over 2-D float arrays. They parse into an
AST, print back to the same text, and run either in the tree interpreter or
as compiled register code.
"""

import numpy as np

from evofilter import kalman
from evofilter.dsl import execute, interpret, parse, to_generic, to_text

# a constant-velocity predict step followed by a gain computation
source = """
fn step(x, F, P, Q, R) -> (x_next, K) {
  x_next = F @ x
  P_next = F @ P @ tr(F) + Q
  K = P_next @ inv(P_next + R)
}
"""
prog = parse(source)
print(to_text(prog))

env = {
    "x": np.array([[1.0], [2.0]]),
    "F": np.array([[1.0, 1.0], [0.0, 1.0]]),
    "P": np.eye(2),
    "Q": np.eye(2),
    "R": np.eye(2),
}
out = interpret(prog, env)
print("x_next =", out["x_next"].ravel())
print("K =\n", out["K"])

# the compiled form gives the same bits
fast = execute(prog, env)
print("compiled equals interpreted:", all(np.array_equal(fast[n], out[n]) for n in out))

# generic names hide what the variables mean
print(to_text(to_generic(kalman.kalman_program())))
