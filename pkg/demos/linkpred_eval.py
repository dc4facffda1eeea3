"""Raw and filtered link prediction, including how ties are ranked."""

from kgvqa import KgeTrainConfig, SynthConfig, evaluate, generate_synthetic, split_edges, train_kge
from kgvqa.linkpred import rank_entity

corpus = generate_synthetic(SynthConfig(seed=11))
train, test = split_edges(corpus.kg, 0.8, seed=0)
model = train_kge(train, KgeTrainConfig(steps=1000, batch_size=500, dim=16), "transe",
                  corpus.kg.n_entities, corpus.kg.n_relations)
print("raw     ", evaluate(model, test))
h, r, t = (int(x) for x in test[0])
print("one query:", rank_entity(model, (h, r, None), t))
print("filtered", evaluate(model, test, filtered=True, known_edges=corpus.kg.edges))
