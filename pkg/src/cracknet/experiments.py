"""Train / predict / evaluate protocols shared by the CLI and the acceptance suite."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .dataset import PatchGeometry, SamplingPolicy, build_training_set
from .evaluation import Tolerance, evaluate_corpus
from .inference import binarize, normalize_votes, predict_image
from .io import CorpusItem, match_channels
from .network import NetworkConfig, TrainConfig, build_network, train

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    model: object
    trace: object
    reports: dict  # aggregation -> EvalReport
    n_positive: int
    n_negative: int
    predictions: list  # (stem, ProbabilityMap, BinaryPrediction)


def convert_corpus(corpus, channels):
    """Bring every image of a corpus to ``channels`` (luma or replication)."""
    return [CorpusItem(it.stem, match_channels(it.image, channels), it.mask) for it in corpus]


def predict_corpus(model, corpus, norm_mode="mean", threshold=0.5, batch_size=1024, jobs=1):
    def one(item):
        prob = normalize_votes(predict_image(model, item.image, batch_size=batch_size), norm_mode)
        return item.stem, prob, binarize(prob, threshold)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, corpus))
    return [one(it) for it in corpus]


def evaluate_predictions(predictions, corpus, tol, aggregation="both"):
    gt = {it.stem: it.mask for it in corpus}
    return evaluate_corpus([(stem, pred, gt[stem]) for stem, _, pred in predictions], tol, aggregation)


def run_experiment(train_corpus, test_corpus, geometry: PatchGeometry, policy: SamplingPolicy,
                   train_cfg: TrainConfig, tol=Tolerance(), norm_mode="mean", threshold=0.5,
                   model_seed=None, jobs=1, progress_every=0):
    """Build samples, train a fresh network, then evaluate it on ``test_corpus``."""
    channels = train_corpus[0].image.shape[2]
    samples = build_training_set(train_corpus, geometry, policy)
    config = NetworkConfig(channels, geometry.h, geometry.s, train_cfg.dropout_p, train_cfg.beta)
    model = build_network(config, seed=train_cfg.seed if model_seed is None else model_seed)
    model.ratio = float("nan") if policy.R is None else float(policy.R)
    model, trace = train(model, samples, train_cfg, progress_every=progress_every)
    test_corpus = convert_corpus(test_corpus, channels)
    preds = predict_corpus(model, test_corpus, norm_mode, threshold, jobs=jobs)
    reports = evaluate_predictions(preds, test_corpus, tol, "both")
    return RunResult(model, trace, reports, samples.n_positive, samples.n_negative, preds)


def sweep_structure(train_corpus, test_corpus, s_list, h, policy, train_cfg, **kw):
    out = {}
    for s in s_list:
        if s % 2 == 0 or s < 1:
            raise ValueError(f"structure sizes must be odd, got {s}")
        log.info("structure sweep: s=%d", s)
        out[s] = run_experiment(train_corpus, test_corpus, PatchGeometry(h, s), policy, train_cfg, **kw)
    return out


def parse_ratio(token):
    """'natural' -> None, otherwise a positive float."""
    if isinstance(token, str) and token.strip().lower() == "natural":
        return None
    value = float(token)
    if not value > 0:
        raise ValueError(f"ratio must be positive, got {token}")
    return value


def sweep_ratio(train_corpus, test_corpus, r_list, total, geometry, train_cfg, seed=0, **kw):
    """One run per ratio with a fixed total sample count; ``None`` means natural ratio."""
    out = {}
    for r in r_list:
        policy = SamplingPolicy(R=r, total_cap=total, seed=seed)
        log.info("ratio sweep: R=%s", "natural" if r is None else r)
        out[r] = run_experiment(train_corpus, test_corpus, geometry, policy, train_cfg, **kw)
    return out


def natural_ratio(corpus):
    pos = sum(int(it.mask.sum()) for it in corpus)
    total = sum(it.mask.size for it in corpus)
    return (total - pos) / pos if pos else math.inf


def hybrid_split(corpus_a, corpus_b):
    """First half (manifest order) of each training corpus, channels following ``corpus_a``."""
    halves = list(corpus_a[:max(1, len(corpus_a) // 2)]) + list(corpus_b[:max(1, len(corpus_b) // 2)])
    return convert_corpus(halves, corpus_a[0].image.shape[2])


def with_iterations(cfg: TrainConfig, iterations: int) -> TrainConfig:
    return replace(cfg, iterations=iterations)
