"""Tokenizing and comparing short texts with word vectors."""

import numpy as np

from kgvqa import WordVectorTable, avg_vector, cosine, jaccard, tokenize

rng = np.random.default_rng(0)
words = ("what", "animal", "can", "bark", "dog", "cat")
table = WordVectorTable(words, rng.normal(size=(len(words), 8)))

q = tokenize("What animal can BARK?")
fact = tokenize("dog CapableOf bark")
print(q, fact)
print("jaccard", jaccard(q, fact))
print("avg-vector cosine", round(cosine(avg_vector(q, table), avg_vector(fact, table)), 4))
print("'zebra' in table:", table.get("zebra") is not None)
