"""
Language-model mutations offline
================================

The language-model loop builds prompts from two parents, parses fenced code
out of the reply and evaluates every valid program. A scripted backend
stands in for a model server.
"""

from evofilter import engine, kalman, llmsearch
from evofilter.dsl import to_generic, to_text

task = kalman.make_task("predict")
parents = (to_generic(task.reference_program()), to_generic(task.reference_program()))
spec = llmsearch.PromptSpec("anti-leak", parents, task.generic_signature)
prompt = llmsearch.build_prompt(spec)
print(prompt)
print("blocklisted words in prompt:", llmsearch.find_leaks(prompt))

reply = """Here are two variants.
```
fn f(i_1, i_2, i_3, i_4) -> (o_1, o_2) {
  o_1 = i_2 @ i_1
  o_2 = i_2 @ i_3 @ tr(i_2) + i_4
}
```
```
fn f(i_1, i_2) -> (o_1) { o_1 = i_1 }
```
"""
found = llmsearch.parse_completions(reply, task.generic_signature)
print(len(found), "valid programs, rejected:", found.rejections)


def backend(prompt, max_tokens=3000):
    return reply


cfg = engine.EngineConfig(method="llm", task="predict", iterations=2, parents_per_iteration=4)
result = engine.run_discovery(cfg, backend)
print(to_text(result.best_program))
print("validation", result.validation.mean, "reference", result.manifest["reference_fitness"]["validation"])
print(result.eval_counts)
