"""Predict a query's tilt field and use it to re-rank the gallery.

The predictor never sees an identity label: it learns from the unlabelled
pool of pristine patterns, each warped by fresh random fields. At test time
the predicted field is applied to the top-k gallery candidates so they are
compared with the query under matching distortion. A ground-truth run
(the field that actually warped each query) shows the ceiling.

Run:  python3 demos/04_tilt_rerank.py      (about two minutes on one core)
"""

import time
from functools import partial

from tiltrank.benchmark import make_benchmark
from tiltrank.identity import IdentityConfig, train_identity
from tiltrank.pipeline import evaluate_queries
from tiltrank.retrieval import Gallery, rank_gallery, rank_k_accuracy, rerank_top_k
from tiltrank.tilt import TiltConfig, TiltTrainSample, predict_tilt, synth_training_set, tilt_correlation, train_tilt_predictor

bench = make_benchmark()
model = train_identity(bench.train, IdentityConfig()).model

t0 = time.perf_counter()
samples = synth_training_set(bench.pool, 20, seed=7)
params = train_tilt_predictor(samples, TiltConfig()).params
print(f"tilt predictor: {len(samples)} samples, trained in {time.perf_counter() - t0:.0f}s")

held = [TiltTrainSample(q.image, q.tilt) for q in bench.queries]
print(f"Pearson r between predicted and true tilt on the queries: {tilt_correlation(params, held):.3f}")

gallery = Gallery.build([lab for lab, _ in bench.gallery], [im for _, im in bench.gallery], model.embed)
queries = [(q.image, q.label) for q in bench.queries]
predictor = partial(predict_tilt, params)
for mode in ("none", "tilt", "blur", "tilt+blur"):
    r1 = rank_k_accuracy(evaluate_queries(model, gallery, queries, mode, predictor, k=5), 1)
    print(f"re-rank {mode:9s} rank-1 {r1:.2f}")

oracle = [
    rerank_top_k(q.image, rank_gallery(model.embed(q.image), gallery, q.label), gallery,
                 lambda _, t=q.tilt: t, model.embed, min(5, len(gallery)), "tilt")
    for q in bench.queries
]
print(f"re-rank with the true field: rank-1 {rank_k_accuracy(oracle, 1):.2f}")
