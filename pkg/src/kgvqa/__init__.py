"""Knowledge-graph embeddings and image-as-knowledge question answering."""

from .composite import (CompositeWeights, FactIndex, FactScore, candidate_entities, composite_answer,
                        composite_scores, prune_facts)
from .errors import (DataError, DependencyError, DimensionError, EmptyGraph, MalformedLine,
                     NumericalError)
from .fusion import (QAConfig, QAModel, answer, attend_image, attend_question, encode_question, fuse,
                     fvqa_loss, gate, load_qa_model, save_qa_model, train_qa)
from .kg import (KnowledgeGraph, OcclusionSpec, Triple, load_kg, occlude, save_kg, split_edges)
from .kge import (KgeTrainConfig, NegativeBatch, ScoringModel, adversarial_weights, init_model, kge_loss,
                  load_model, sample_negatives, save_model, score, train_kge)
from .linkpred import LinkPredMetrics, evaluate, rank_entity
from .pipeline import (ExperimentConfig, bench_inference, compare_sampling, evaluate_qa, load_config,
                       run_pipeline, sweep_lambda)
from .qadata import ImageAsKnowledge, QAInstance, load_images, load_qa
from .synth import Corpus, SynthConfig, check_corpus, generate_synthetic, write_corpus
from .text import WordVectorTable, avg_vector, cosine, jaccard, load_vectors, tokenize

__version__ = "0.1.0"
