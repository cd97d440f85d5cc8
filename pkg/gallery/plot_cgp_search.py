"""
Evolving a predict step
=======================

Island search with graph mutations on the predict task. The winner is picked
on the validation split and compared against the reference predict step.
"""

from evofilter import engine
from evofilter.dsl import to_text

cfg = engine.EngineConfig(
    method="cgp", task="predict", seed=0, iterations=10**6, eval_budget=200_000,
    mutations_per_parent=50,
)
result = engine.run_discovery(cfg)
ref = result.manifest["reference_fitness"]["validation"]
print(to_text(result.best_program))
print(f"validation {result.validation.mean:.4f}  reference {ref:.4f}")
print("evaluations:", result.eval_counts["total"])
for row in result.fitness_history[-4:]:
    print(row)

# plain random sampling with the same budget
rnd = engine.run_discovery(engine.EngineConfig(method="random", task="predict", seed=0, iterations=10**6, eval_budget=200_000))
print(f"random search {rnd.validation.mean:.4f}")
