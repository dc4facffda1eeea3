"""Train the gated question answering model on a small synthetic corpus and inspect attention."""

import numpy as np

from kgvqa import KgeTrainConfig, QAConfig, SynthConfig, answer, generate_synthetic, train_kge, train_qa
from kgvqa.pipeline import evaluate_qa

c = generate_synthetic(SynthConfig(n_entities=60, n_edges=300, n_images=12, n_questions=80, seed=4))
emb = train_kge(c.kg.edges, KgeTrainConfig(steps=500, batch_size=128, dim=32), "transe",
                c.kg.n_entities, c.kg.n_relations)
entity = emb.params["entity"]

train, test = c.qa[:60], c.qa[60:]
model = train_qa(train, entity, c.vectors, QAConfig(state_dim=32, epochs=120, learning_rate=0.1, seed=0))
print("train", evaluate_qa(train, model))
print("test ", evaluate_qa(test, model))

q = test[0]
a_q, a_i = model.attention(q)
print(" ".join(q.question), "->", c.kg.entities[answer(q, model)], "| gold", c.kg.entities[q.answer])
print("question attention", np.round(a_q, 3))
print("image attention   ", dict(zip((c.kg.entities[e] for e in q.image.concepts), (round(float(x), 3) for x in a_i))))
