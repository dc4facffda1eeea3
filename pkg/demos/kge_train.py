"""Train the three scoring models on a planted translation graph."""

from kgvqa import KgeTrainConfig, SynthConfig, generate_synthetic, score, train_kge

corpus = generate_synthetic(SynthConfig(n_entities=100, n_edges=600, n_images=5, n_questions=20, seed=2))
kg = corpus.kg
h, r, t = kg.edges[0]

for kind in ("transe", "rotate", "ermlp"):
    cfg = KgeTrainConfig(steps=300, batch_size=128, dim=16)
    model = train_kge(kg.edges, cfg, kind, kg.n_entities, kg.n_relations)
    losses = [row[1] for row in model.trajectory]
    print(f"{kind:7s} loss {losses[0]:.3f} -> {losses[-1]:.3f}; "
          f"score{kg.surface((h, r, t))} = {score(model, h, r, t):.3f}")

