"""Independent reference implementations used as test oracles.

Everything in this module recomputes quantities from first principles
(explicit loops, itertools enumeration) so that library results are checked
against a second, structurally different route.
"""

import itertools
import math

import numpy as np

import shapprune as sp


def tiny_random_model(seed, kind, n_fields=3, field_size=2, dim=2, hidden=(4,)):
    """Randomly initialized micro model plus a matching random batch."""
    rng = np.random.default_rng(seed)
    schema = sp.FieldSchema.categorical(n_fields)
    tables = tuple({f"f{f}t{k}": k for k in range(field_size - 1)} for f in range(n_fields))
    vocab = sp.Vocabulary(schema, tables, 0)
    config = sp.TrainConfig(backbone=kind, dim=dim, hidden=hidden, seed=seed)
    model = sp.init_model(vocab, config)
    model.embedding.values[...] = rng.normal(0.0, 0.6, model.embedding.values.shape)
    model.backbone.linear[...] = rng.normal(0.0, 0.3, model.backbone.linear.shape)
    model.backbone.bias = float(rng.normal(0.0, 0.2))
    for weight, bias in model.backbone.layers:
        weight[...] = rng.normal(0.0, 0.5, weight.shape)
        bias[...] = rng.normal(0.0, 0.1, bias.shape)
    ids = np.stack(
        [vocab.offsets[:-1] + rng.integers(0, field_size, n_fields) for _ in range(8)]
    ).astype(np.int64)
    labels = rng.integers(0, 2, 8).astype(np.int64)
    return model, ids, labels


def flat_fm_model(n_fields, field_size, dim, seed=0):
    """Plain FM with random parameters and a random encoded dataset."""
    rng = np.random.default_rng(seed)
    tables = tuple({f"f{j}t{k}": k for k in range(field_size - 1)} for j in range(n_fields))
    vocab = sp.Vocabulary(sp.FieldSchema.categorical(n_fields), tables, 0)
    values = rng.normal(0.0, 0.5, (vocab.n, dim))
    model = sp.Model(
        sp.EmbeddingTable(values, vocab.offsets.copy()),
        sp.BackboneParams(sp.FM, 0.05, rng.normal(0.0, 0.1, vocab.n), []),
        vocab,
    )
    ids = np.stack(
        [vocab.offsets[:-1] + rng.integers(0, field_size, n_fields) for _ in range(32)]
    ).astype(np.int64)
    labels = rng.integers(0, 2, 32).astype(np.int64)
    ds = sp.dataset_from_encoded(ids, labels, vocab)
    return model, ds


def naive_predict_proba(model, feature_ids):
    """Score one instance with explicit loops instead of vectorized algebra."""
    backbone = model.backbone
    vectors = [np.asarray(model.embedding.values[i], dtype=np.float64) for i in feature_ids]
    z = float(backbone.bias)
    for i in feature_ids:
        z += float(backbone.linear[i])
    for a in range(len(vectors)):
        for b in range(a + 1, len(vectors)):
            z += float(np.dot(vectors[a], vectors[b]))
    if backbone.kind == "deepfm":
        h = np.concatenate(vectors)
        for weight, bias in backbone.layers[:-1]:
            h = np.maximum(weight @ h + bias, 0.0)
        weight, bias = backbone.layers[-1]
        z += float((weight @ h + bias)[0])
    p = 1.0 / (1.0 + math.exp(-z))
    return min(max(p, 1e-7), 1.0 - 1e-7)


def naive_log_loss(model, feature_ids, label):
    p = naive_predict_proba(model, feature_ids)
    return -math.log(p) if label == 1 else -math.log(1.0 - p)


def masked_log_loss(model, instance, kept_coords):
    """Loss after zeroing every embedding coordinate outside ``kept_coords``.

    ``kept_coords`` is a set of (feature_id, column) pairs.  Coordinates of
    features that do not appear in the instance are irrelevant to the score.
    """
    saved = model.embedding.values.copy()
    masked = np.zeros_like(saved)
    for (row, col) in kept_coords:
        masked[row, col] = saved[row, col]
    model.embedding.values[...] = masked
    try:
        return naive_log_loss(model, instance.feature_ids, instance.label)
    finally:
        model.embedding.values[...] = saved


def exact_local_shapley_reference(model, instance, dim):
    """Per-coordinate Shapley values for one instance by direct enumeration.

    Players are the md coordinates of the instance's own embedding rows.
    The value of a coalition is the loss drop obtained by keeping exactly
    that coalition and zeroing the rest, relative to keeping nothing.
    Uses the subset-weight form of the Shapley value.
    """
    ids = list(instance.feature_ids)
    players = [(fid, col) for fid in ids for col in range(dim)]
    md = len(players)
    value = {}
    for bits in range(1 << md):
        kept = {players[k] for k in range(md) if bits >> k & 1}
        value[bits] = masked_log_loss(model, instance, kept)
    base = value[0]
    phi = np.zeros((len(ids), dim))
    for k, (fid, col) in enumerate(players):
        total = 0.0
        for bits in range(1 << md):
            if bits >> k & 1:
                continue
            s = bin(bits).count("1")
            weight = 1.0 / (md * math.comb(md - 1, s))
            total += weight * ((value[bits | 1 << k] - base) - (value[bits] - base))
        # Loss drops as coordinates are kept; attribution follows the
        # removal direction, so negate the keep-direction marginal.
        phi[k // dim, k % dim] = -total
    return phi


def permutation_shapley_reference(model, instance, dim):
    """Same attribution as ``exact_local_shapley_reference`` via permutations."""
    ids = list(instance.feature_ids)
    players = [(fid, col) for fid in ids for col in range(dim)]
    md = len(players)
    phi = np.zeros((len(ids), dim))
    full = masked_log_loss(model, instance, set(players))
    for order in itertools.permutations(range(md)):
        kept = set(players)
        before = full
        for k in order:
            kept.discard(players[k])
            after = masked_log_loss(model, instance, kept)
            phi[k // dim, k % dim] += after - before
            before = after
    return phi / math.factorial(md)


def table_game_exact_shapley(model, instance, dim, n_rows):
    """Shapley values of the full-table game with n*d coordinate players.

    Every coordinate of the embedding table is a player, including rows of
    features absent from the instance.  Only usable for tiny tables.
    """
    nd = n_rows * dim
    losses = np.empty(1 << nd)
    for bits in range(1 << nd):
        kept = {(k // dim, k % dim) for k in range(nd) if bits >> k & 1}
        losses[bits] = masked_log_loss(model, instance, kept)
    base = losses[0]
    phi = np.zeros((n_rows, dim))
    for k in range(nd):
        total = 0.0
        for bits in range(1 << nd):
            if bits >> k & 1:
                continue
            s = bin(bits).count("1")
            weight = 1.0 / (nd * math.comb(nd - 1, s))
            total += weight * ((losses[bits | 1 << k] - base) - (losses[bits] - base))
        phi[k // dim, k % dim] = -total
    return phi


def pairwise_auc_reference(labels, scores):
    """AUC as the fraction of correctly ordered positive/negative pairs."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        return None
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (pos.size * neg.size)


def flatten_params(model):
    """All trainable parameters as one flat vector, with a rebuilder."""
    backbone = model.backbone
    parts = [model.embedding.values, backbone.linear, np.array([backbone.bias])]
    for weight, bias in backbone.layers:
        parts.append(weight)
        parts.append(bias)
    shapes = [p.shape for p in parts]
    flat = np.concatenate([p.ravel() for p in parts])

    def write_back(vector):
        cursor = 0
        arrays = []
        for shape in shapes:
            size = int(np.prod(shape))
            arrays.append(vector[cursor:cursor + size].reshape(shape))
            cursor += size
        model.embedding.values[...] = arrays[0]
        backbone.linear[...] = arrays[1]
        backbone.bias = float(arrays[2][0])
        for idx, (weight, bias) in enumerate(backbone.layers):
            weight[...] = arrays[3 + 2 * idx]
            bias[...] = arrays[4 + 2 * idx]

    return flat, write_back


def batch_loss_mean(model, ids, labels):
    total = 0.0
    for row, label in zip(ids, labels):
        total += naive_log_loss(model, row, label)
    return total / len(labels)
