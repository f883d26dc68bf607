import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from usg.graph import Modality
from usg.model import ModelConfig
from usg.model.layers import MLP, Linear
from usg.model.ops import (
    QuerySet,
    RelationQuerySet,
    associate_objects,
    binarize_attention_mask,
    build_relation_queries,
    classify_objects,
    classify_relations,
    filter_associations,
    fuse_queries,
    infer_associations,
    init_queries,
    mask_decoder_step,
    open_vocab_label,
    pair_confidence,
    predict_masks,
    project_subject_object,
    relation_decode,
    rpc_refine,
    run_mask_decoder,
    select_top_k_pairs,
    temporal_encode,
)
from usg.model.params import AssociatorProjections, ConvLayer, MaskDecoderParams, Projector, RPCLayer, RelationLayer
from usg.tensor import DimensionError

from conftest import (
    py_affine,
    py_attention,
    py_cos,
    py_matmul,
    py_mlp,
    py_sigmoid,
    random_attention,
    random_linear,
    random_mlp,
)

IMG = Modality.IMAGE
NEG = -math.inf


def qs(m, mod=IMG):
    return QuerySet(mod, np.asarray(m, dtype=float))


def close(a, b, tol=1e-12):
    np.testing.assert_allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float), rtol=0, atol=tol)


def add(a, b):
    return [[x + y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)]


class TestQueriesAndMasks:
    def test_init_deterministic(self):
        cfg = ModelConfig(embed_dim=8, num_queries=5)
        a, b = init_queries(cfg, IMG, 3), init_queries(cfg, IMG, 3)
        assert np.array_equal(a.queries, b.queries) and a.queries.shape == (5, 8)
        assert not np.array_equal(a.queries, init_queries(cfg, IMG, 4).queries)

    def test_zero_queries_propagate(self, rng):
        cfg = ModelConfig(embed_dim=4, num_queries=0, mask_decoder_layers=3)
        x0 = init_queries(cfg, IMG, 0)
        assert x0.queries.shape == (0, 4)
        layers = tuple(random_attention(rng, 4) for _ in range(3))
        out = run_mask_decoder(x0, [rng.normal(size=(5, 4))], cfg, MaskDecoderParams(layers, random_mlp(rng, 4)))
        assert out.queries.shape == (0, 4)
        assert associate_objects(out, qs(rng.normal(size=(3, 4))),
                                 AssociatorProjections(Linear.identity(4), Linear.identity(4))).shape == (0, 3)

    def test_binarize(self):
        assert binarize_attention_mask(np.ones((2, 3))).tolist() == [[0.0] * 3] * 2
        assert (binarize_attention_mask(np.zeros((1, 2))) == NEG).all()
        assert binarize_attention_mask([[0.4, 0.5, 0.9]], 0.5).tolist() == [[NEG, 0.0, 0.0]]

    @pytest.mark.parametrize("t", [0.0, 1.0, -0.1])
    def test_binarize_threshold_range(self, t):
        with pytest.raises(ValueError):
            binarize_attention_mask([[0.5]], t)


class TestMaskDecoder:
    def test_zero_value_is_residual(self, rng):
        x, f = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
        assert np.array_equal(mask_decoder_step(x, f, np.zeros((3, 5)), random_attention(rng, 4, zero_value=True)), x)

    def test_single_unmasked_key_copies_value(self, rng):
        x, f = rng.normal(size=(2, 3)), rng.normal(size=(3, 3))
        att = random_attention(rng, 3)
        mask = np.full((2, 3), NEG)
        mask[0, 2] = mask[1, 0] = 0.0
        out = mask_decoder_step(x, f, mask, att)
        vals = py_affine(f, att.v)
        close(out, add(x.tolist(), [vals[2], vals[0]]))

    def test_two_by_two_hand_oracle(self, rng):
        x, f = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
        att = random_attention(rng, 2)
        mask = [[0.0, NEG], [0.0, 0.0]]
        close(mask_decoder_step(x, f, mask, att), add(py_attention(x, f, att, mask), x.tolist()))

    def test_masked_key_has_no_influence(self, rng):
        x, f = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
        mask = np.zeros((3, 5))
        mask[:, 1] = NEG
        att = random_attention(rng, 4)
        g = f.copy()
        g[1] += 100.0
        assert np.array_equal(mask_decoder_step(x, f, mask, att), mask_decoder_step(x, g, mask, att))

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            mask_decoder_step(np.ones((2, 3)), np.ones((2, 4)), np.zeros((2, 2)), random_attention(rng, 3))

    def test_zero_layers_identity(self, rng):
        x0 = qs(rng.normal(size=(2, 3)))
        cfg = ModelConfig(embed_dim=3, mask_decoder_layers=0)
        assert run_mask_decoder(x0, [], cfg, MaskDecoderParams((), random_mlp(rng, 3))) is x0

    def test_one_layer_is_one_step(self, rng):
        x0, f = qs(rng.normal(size=(2, 3))), rng.normal(size=(4, 3))
        att = random_attention(rng, 3)
        cfg = ModelConfig(embed_dim=3, mask_decoder_layers=1)
        out = run_mask_decoder(x0, [f], cfg, MaskDecoderParams((att,), random_mlp(rng, 3)))
        assert np.array_equal(out.queries, mask_decoder_step(x0.queries, f, np.zeros((2, 4)), att))

    def test_two_layer_chain_oracle(self, rng):
        x0 = rng.normal(size=(2, 2))
        scales = [rng.normal(size=(3, 2)), rng.normal(size=(3, 2))]
        layers = (random_attention(rng, 2), random_attention(rng, 2))
        head = random_mlp(rng, 2, hidden=3)
        x1 = add(py_attention(x0, scales[0], layers[0]), x0.tolist())
        logits = py_matmul(py_mlp(x1, head), scales[1].T)
        mask = [[0.0 if py_sigmoid(v) >= 0.5 else NEG for v in row] for row in logits]
        x2 = add(py_attention(x1, scales[1], layers[1], mask), x1)
        cfg = ModelConfig(embed_dim=2, mask_decoder_layers=2)
        close(run_mask_decoder(qs(x0), scales, cfg, MaskDecoderParams(layers, head)).queries, x2)

    def test_empty_feature_list(self, rng):
        cfg = ModelConfig(embed_dim=2, mask_decoder_layers=1)
        with pytest.raises(ValueError):
            run_mask_decoder(qs(np.ones((1, 2))), [], cfg, MaskDecoderParams((random_attention(rng, 2),), random_mlp(rng, 2)))


class TestTemporal:
    def test_single_frame_zero_value(self, rng):
        f = qs(rng.normal(size=(3, 4)), Modality.VIDEO)
        (out,) = temporal_encode([f], random_attention(rng, 4, zero_value=True))
        assert np.array_equal(out.queries, f.queries)

    def test_single_frame_adds_own_value(self, rng):
        f = qs(rng.normal(size=(2, 3)), Modality.VIDEO)
        att = random_attention(rng, 3)
        (out,) = temporal_encode([f], att)
        close(out.queries, f.queries + att.v(f.queries))

    def test_identical_frames_identical_outputs(self, rng):
        f = qs(rng.normal(size=(3, 4)), Modality.VIDEO)
        a, b = temporal_encode([f, f], random_attention(rng, 4))
        assert np.array_equal(a.queries, b.queries)

    def test_three_frames_hand_oracle(self, rng):
        frames = [rng.normal(size=(2, 2)) for _ in range(3)]
        att = random_attention(rng, 2)
        out = temporal_encode([qs(f, Modality.VIDEO) for f in frames], att)
        for i in range(2):
            track = [f[i].tolist() for f in frames]
            expected = add(py_attention(track, track, att), track)
            close([o.queries[i] for o in out], expected)

    def test_ragged_frames(self, rng):
        with pytest.raises(DimensionError):
            temporal_encode([qs(np.ones((2, 3))), qs(np.ones((3, 3)))], random_attention(rng, 3))


def assoc_oracle(qa, qb, proj):
    fa, fb = py_affine(qa, proj.forward), py_affine(qb, proj.backward)
    return [[(py_cos(fa[i], qb[j]) + py_cos(fb[j], qa[i])) / 2 for j in range(len(qb))] for i in range(len(qa))]


class TestAssociator:
    def test_identity_projection_diagonal(self, rng):
        q = rng.normal(size=(4, 5))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        ident = AssociatorProjections(Linear.identity(5), Linear.identity(5))
        close(np.diag(associate_objects(qs(q), qs(q, Modality.TEXT), ident)), 1.0)

    def test_zero_projection_all_zero(self, rng):
        zero = AssociatorProjections(Linear.zeros(3), Linear.zeros(3))
        assert not associate_objects(qs(rng.normal(size=(2, 3))), qs(rng.normal(size=(4, 3))), zero).any()

    def test_two_by_two_oracle(self, rng):
        qa, qb = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
        proj = AssociatorProjections(random_linear(rng, 2), random_linear(rng, 2))
        close(associate_objects(qs(qa), qs(qb), proj), assoc_oracle(qa.tolist(), qb.tolist(), proj))

    def test_swap_symmetry(self, rng):
        qa, qb = qs(rng.normal(size=(3, 4))), qs(rng.normal(size=(5, 4)))
        f, b = random_linear(rng, 4), random_linear(rng, 4)
        ab = associate_objects(qa, qb, AssociatorProjections(f, b))
        ba = associate_objects(qb, qa, AssociatorProjections(b, f))
        assert np.array_equal(ab, ba.T)

    def test_filter_zero_kernels_half(self, rng):
        cfg = ModelConfig(associator_layers=3)
        layers = [ConvLayer(np.zeros((3, 3)), 0.0)] * 3
        assert (filter_associations(rng.uniform(-1, 1, (4, 5)), cfg, layers) == 0.5).all()

    def test_filter_identity_kernels_logistic(self, rng):
        k = np.zeros((3, 3))
        k[1, 1] = 1.0
        raw = rng.random((4, 4))
        out = filter_associations(raw, ModelConfig(associator_layers=3), [ConvLayer(k, 0.0)] * 3)
        close(out, [[py_sigmoid(v) for v in row] for row in raw.tolist()], 1e-15)
        order = np.argsort(raw, axis=None)
        assert (np.diff(out.ravel()[order]) >= 0).all()

    def test_filter_layer_unrolled_oracle(self, rng):
        raw = rng.uniform(-1, 1, (4, 4))
        layers = [ConvLayer(rng.normal(size=(3, 3)), float(rng.normal())) for _ in range(3)]

        def conv(x, k):
            n, m = len(x), len(x[0])
            return [[sum(k[a][b] * x[i + a - 1][j + b - 1] for a in range(3) for b in range(3)
                         if 0 <= i + a - 1 < n and 0 <= j + b - 1 < m) for j in range(m)] for i in range(n)]

        x = raw.tolist()
        for idx, layer in enumerate(layers):
            x = [[v + layer.bias for v in row] for row in conv(x, layer.kernel.tolist())]
            if idx < 2:
                x = [[max(0.0, v) for v in row] for row in x]
        expected = [[py_sigmoid(v) for v in row] for row in x]
        close(filter_associations(raw, ModelConfig(associator_layers=3), layers), expected)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_raw_in_unit_interval(self, seed):
        r = np.random.default_rng(seed)
        proj = AssociatorProjections(random_linear(r, 3, scale=2), random_linear(r, 3, scale=2))
        raw = associate_objects(qs(r.normal(size=(4, 3))), qs(r.normal(size=(3, 3))), proj)
        assert (np.abs(raw) <= 1.0).all()


class TestFusionAndHeads:
    def test_no_partners(self, rng):
        q = qs(rng.normal(size=(2, 3)))
        assert np.array_equal(fuse_queries(q, []).queries, q.queries)

    def test_one_hot(self, rng):
        q, p = qs(rng.normal(size=(2, 3))), qs(rng.normal(size=(3, 3)))
        a = np.zeros((2, 3))
        a[1, 2] = 1.0
        out = fuse_queries(q, [(a, p)]).queries
        assert np.array_equal(out[0], q.queries[0])
        close(out[1], q.queries[1] + p.queries[2], 0)

    def test_double_sum_oracle(self, rng):
        q = rng.normal(size=(2, 2))
        partners = [(rng.random((2, 3)), rng.normal(size=(3, 2))), (rng.random((2, 2)), rng.normal(size=(2, 2)))]
        expected = [[q[i, c] + sum(a[i, j] * p[j, c] for a, p in partners for j in range(p.shape[0]))
                     for c in range(2)] for i in range(2)]
        close(fuse_queries(qs(q), [(a, qs(p)) for a, p in partners]).queries, expected)

    def test_fuse_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            fuse_queries(qs(np.ones((2, 3))), [(np.ones((3, 3)), qs(np.ones((3, 3))))])

    def test_classify_objects(self, rng):
        labels = np.eye(4)[:3]
        assert int(np.argmax(classify_objects(qs(labels[[1]] * 1.0 + np.array([[0, 0, 0, 0.0]])), labels))) == 1
        assert not classify_objects(qs(np.zeros((2, 4))), labels).any()
        q, e = rng.integers(-5, 5, (2, 4)).astype(float), rng.integers(-5, 5, (3, 4)).astype(float)
        assert classify_objects(qs(q), e).tolist() == py_matmul(q, e.T)

    def test_predict_masks(self, rng):
        px = rng.normal(size=(4, 3))
        zero_head = random_mlp(rng, 3, zero_output=True)
        assert (predict_masks(qs(rng.normal(size=(2, 3))), px, zero_head) == 0.5).all()
        head = random_mlp(rng, 3)
        q = rng.normal(size=(1, 3))
        emb = py_mlp(q, head)[0]
        expected = [[py_sigmoid(sum(a * b for a, b in zip(emb, p))) for p in px.tolist()]]
        out = predict_masks(qs(q), px, head)
        close(out, expected)
        assert ((out > 0) & (out < 1)).all()

    def test_predict_masks_dim(self, rng):
        with pytest.raises(DimensionError):
            predict_masks(qs(np.ones((1, 3))), np.ones((4, 2)), random_mlp(rng, 3))


def rpc_layer(rng, d, zero=False):
    return RPCLayer(*(random_attention(rng, d, zero_value=zero) for _ in range(4)))


class TestRPC:
    def test_identity_projectors(self, rng):
        q = qs(rng.normal(size=(3, 4)))
        s, o = project_subject_object(q, Projector(MLP.identity(4), MLP.identity(4)))
        close(s, q.queries, 0)
        close(o, q.queries, 0)

    def test_zero_weight_projectors_replicate_bias(self, rng):
        b = rng.normal(size=(1, 3))
        zero_w = MLP(Linear.zeros(3), Linear(np.zeros((3, 3)), b))
        s, _ = project_subject_object(qs(rng.normal(size=(4, 3))), Projector(zero_w, zero_w))
        assert (s == b).all()

    def test_projector_oracle(self, rng):
        q = rng.normal(size=(3, 2))
        p = Projector(random_mlp(rng, 2, 4), random_mlp(rng, 2, 4))
        s, o = project_subject_object(qs(q), p)
        close(s, py_mlp(q, p.subject))
        close(o, py_mlp(q, p.object))

    def test_zero_layers(self, rng):
        s, o = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
        out = rpc_refine(s, o, ModelConfig(rpc_layers=0), ())
        assert np.array_equal(out[0], s) and np.array_equal(out[1], o)

    def test_one_layer_simultaneous_oracle(self, rng):
        s, o = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
        layer = rpc_layer(rng, 2)
        ns = add(s.tolist(), py_attention(s, o, layer.cross_sub))
        no = add(o.tolist(), py_attention(o, s, layer.cross_obj))
        es = add(ns, py_attention(ns, ns, layer.self_sub))
        eo = add(no, py_attention(no, no, layer.self_obj))
        out = rpc_refine(s, o, ModelConfig(rpc_layers=1), (layer,))
        close(out[0], es)
        close(out[1], eo)

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            rpc_refine(np.ones((2, 3)), np.ones((3, 3)), ModelConfig(rpc_layers=1), (rpc_layer(rng, 3),))

    def test_pair_confidence_cosine(self):
        assert pair_confidence([[3.0, 4.0]], [[4.0, 3.0]])[0, 0] == pytest.approx(0.96, abs=1e-15)
        assert pair_confidence([[1.0, 0.0]], [[0.0, 1.0]])[0, 0] == 0.0


def top_k_oracle(c, k):
    cells = [(-c[i][j], i, j) for i in range(len(c)) for j in range(len(c[0]))]
    return [(i, j) for _, i, j in sorted(cells)[:k]]


class TestTopK:
    def test_all_pairs_descending(self, rng):
        c = rng.uniform(-1, 1, (3, 3))
        pairs = select_top_k_pairs(c, 9)
        scores = [c[i, j] for i, j in pairs]
        assert scores == sorted(scores, reverse=True) and len(set(pairs)) == 9

    def test_k_one_argmax(self, rng):
        c = rng.uniform(-1, 1, (4, 5))
        assert select_top_k_pairs(c, 1) == [tuple(int(v) for v in np.unravel_index(np.argmax(c), c.shape))]

    def test_tie_on_three_by_three(self):
        c = [[0.1, 0.9, 0.3], [0.9, 0.2, 0.0], [0.5, 0.4, 0.6]]
        assert select_top_k_pairs(c, 3) == [(0, 1), (1, 0), (2, 2)] == top_k_oracle(c, 3)

    def test_k_too_large(self):
        with pytest.raises(ValueError):
            select_top_k_pairs(np.zeros((2, 2)), 5)


class TestRelationDecoder:
    def test_build_empty(self, rng):
        x = rng.normal(size=(3, 4))
        assert build_relation_queries([], x, x, x, x).tokens.shape == (0, 4)

    def test_build_zero_embeddings(self, rng):
        xs, xo = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
        z = np.zeros((3, 2))
        assert build_relation_queries([(0, 2)], xs, xo, z, z).tokens.tolist() == [xs[0].tolist(), xo[2].tolist()]

    def test_build_two_pairs_oracle(self, rng):
        xs, xo, es, eo = (rng.normal(size=(3, 2)) for _ in range(4))
        pairs = [(2, 0), (1, 1)]
        expected = [[xs[i, c] + es[i, c] for c in range(2)] for i, _ in pairs] + \
                   [[xo[j, c] + eo[j, c] for c in range(2)] for _, j in pairs]
        assert build_relation_queries(pairs, xs, xo, es, eo).tokens.tolist() == expected

    def test_build_bad_index(self, rng):
        x = rng.normal(size=(2, 2))
        with pytest.raises(IndexError):
            build_relation_queries([(0, 2)], x, x, x, x)

    def test_odd_tokens_rejected(self):
        with pytest.raises(DimensionError):
            RelationQuerySet(np.zeros((3, 2)))

    def test_zero_layers_identity(self, rng):
        t = rng.normal(size=(4, 3))
        assert np.array_equal(relation_decode(RelationQuerySet(t), np.zeros((0, 3)), ModelConfig(relation_decoder_layers=0), ()), t)

    def test_one_layer_oracle(self, rng):
        tokens, ctx = rng.normal(size=(2, 2)), rng.normal(size=(3, 2))
        layer = RelationLayer(random_attention(rng, 2), random_attention(rng, 2), random_mlp(rng, 2, 4))
        x = add(tokens.tolist(), py_attention(tokens, ctx, layer.cross))
        x = add(x, py_attention(x, x, layer.self_attn))
        x = add(x, py_mlp(x, layer.ffn))
        close(relation_decode(RelationQuerySet(tokens), ctx, ModelConfig(relation_decoder_layers=1), (layer,)), x)

    def test_empty_context_rejected(self, rng):
        layer = RelationLayer(random_attention(rng, 2), random_attention(rng, 2), random_mlp(rng, 2))
        with pytest.raises(ValueError):
            relation_decode(RelationQuerySet(np.ones((2, 2))), np.zeros((0, 2)), ModelConfig(relation_decoder_layers=1), (layer,))

    def test_classify_relations(self, rng):
        e = np.eye(3)
        assert not classify_relations(np.zeros((2, 3)), e).any()
        # subject + object tokens averaging to e_1
        assert int(np.argmax(classify_relations([[0, 2.0, 1], [0, 0, -1]], e))) == 1
        x, p = rng.normal(size=(2, 4)), rng.normal(size=(3, 4))
        pooled = [(a + b) / 2 for a, b in zip(x[0], x[1])]
        close(classify_relations(x, p), [[sum(a * b for a, b in zip(pooled, row)) for row in p.tolist()]])
        with pytest.raises(DimensionError):
            classify_relations(np.ones((3, 3)), e)


def best_assignment_value(m):
    n, k = m.shape
    if n <= k:
        return max(sum(m[i, c] for i, c in enumerate(cols)) for cols in itertools.permutations(range(k), n))
    return max(sum(m[r, j] for j, r in enumerate(rows)) for rows in itertools.permutations(range(n), k))


class TestInference:
    def test_identity_like(self):
        links = infer_associations(np.eye(3) * 0.5 + 0.5, 0.5)
        assert [(i, j) for i, j, _ in links] == [(0, 0), (1, 1), (2, 2)]

    def test_all_below_threshold(self, rng):
        assert infer_associations(rng.random((3, 3)) * 0.49, 0.5) == []

    def test_four_by_five_brute_force(self, rng):
        for _ in range(20):
            m = rng.random((4, 5))
            links = infer_associations(m, 0.0)
            assert len(links) == 4
            assert math.isclose(sum(s for _, _, s in links), best_assignment_value(m), abs_tol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_exhaustive_up_to_six(self, n, m, seed):
        mat = np.random.default_rng(seed).random((n, m))
        links = infer_associations(mat, 0.0)
        assert math.isclose(sum(s for _, _, s in links), best_assignment_value(mat), abs_tol=1e-12)

    def test_open_vocab(self, rng):
        names = ["cat", "dog", "car"]
        emb = rng.normal(size=(3, 4))
        assert open_vocab_label(qs(emb[[2, 0]]), emb, names) == ["car", "cat"]
        assert open_vocab_label(qs(np.zeros((1, 4))), emb, names) == ["cat"]
        q = rng.normal(size=(2, 4))
        expected = [names[max(range(3), key=lambda k: (py_cos(row, emb[k]), -k))] for row in q.tolist()]
        assert open_vocab_label(qs(q), emb, names) == expected
        with pytest.raises(ValueError):
            open_vocab_label(qs(q), np.zeros((0, 4)), [])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
    def test_open_vocab_scale_invariant(self, seed, lam):
        r = np.random.default_rng(seed)
        emb, q = r.normal(size=(5, 3)), r.normal(size=(4, 3))
        names = list("abcde")
        scaled = q.copy()
        scaled[1] *= lam
        assert open_vocab_label(qs(q), emb, names) == open_vocab_label(qs(scaled), emb, names)
