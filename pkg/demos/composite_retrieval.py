"""Fact pruning and the weighted three-metric answer ranking."""

from kgvqa import (CompositeWeights, FactIndex, KgeTrainConfig, QAConfig, SynthConfig, candidate_entities,
                   composite_answer, generate_synthetic, prune_facts, train_kge, train_qa)

c = generate_synthetic(SynthConfig(n_entities=60, n_edges=300, n_images=12, n_questions=80, seed=4))
emb = train_kge(c.kg.edges, KgeTrainConfig(steps=300, batch_size=128, dim=16), "transe",
                c.kg.n_entities, c.kg.n_relations)
model = train_qa(c.qa, emb.params["entity"], c.vectors, QAConfig(state_dim=16, epochs=40, learning_rate=0.1))
index = FactIndex(c.kg, c.vectors)

q = c.qa[0]
facts = prune_facts(q.question, q.image, c.kg, c.vectors, top_k=5, index=index)
print(" ".join(q.question))
for f in facts:
    print(f"  {f.eta:6.3f}  {c.kg.surface(f.fact)}")
print("candidates", [c.kg.entities[e] for e in candidate_entities(facts)])

for lam in ((1, 0, 0), (0, 1, 0), (0, 0, 1), (0.4, 0.3, 0.3)):
    a = composite_answer(q, model, facts, CompositeWeights(*lam), c.vectors, c.kg)
    print(lam, "->", c.kg.entities[a])
print("gold", c.kg.entities[q.answer])
