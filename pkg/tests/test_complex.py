import numpy as np
import pytest

from kgrerank import MissingEmbedding
from kgrerank.complex import (ComplexEmbeddingSpace, TrainConfig, bce_loss_and_grads,
                              complex_score, corrupt, evaluate_link_prediction, random_mrr,
                              rank_entities, read_complex, score_triple, train_complex,
                              write_complex)
from kgrerank.kg import KnowledgeGraph, Vocab

from gradcheck import numeric_grad, rel_error
from synthetic import antisymmetric, kinship


def space_from(ent, rel, names=None):
    ent = np.asarray(ent, dtype=np.float64)
    rel = np.asarray(rel, dtype=np.float64)
    names = names or [f"e{i}" for i in range(len(ent))]
    return ComplexEmbeddingSpace(Vocab(names), Vocab(f"r{i}" for i in range(len(rel))), ent, rel)


def c2row(z):
    """Complex vector -> concatenated real|imaginary row."""
    z = np.asarray(z, dtype=complex)
    return np.concatenate([z.real, z.imag])


def test_zero_relation_scores_zero():
    rng = np.random.default_rng(0)
    sp = space_from(rng.normal(size=(3, 8)), np.zeros((1, 8)))
    assert all(score_triple(sp, h, 0, t) == 0.0 for h in range(3) for t in range(3))


def test_identity_case():
    sp = space_from([c2row([1 + 0j])], [c2row([1 + 0j])])
    assert score_triple(sp, 0, 0, 0) == 1.0


def test_imaginary_case():
    sp = space_from([c2row([1j]), c2row([1 + 0j])], [c2row([1j])])
    assert score_triple(sp, 0, "r0", 1) == -1.0


def test_matches_hermitian_product():
    rng = np.random.default_rng(1)
    for _ in range(20):
        h, r, t = (rng.normal(size=5) + 1j * rng.normal(size=5) for _ in range(3))
        expected = np.real(np.sum(h * r * np.conj(t)))
        assert complex_score(c2row(h), c2row(r), c2row(t)) == pytest.approx(expected)


def test_unknown_id():
    sp = space_from([c2row([1 + 0j])], [c2row([1 + 0j])])
    with pytest.raises(MissingEmbedding):
        score_triple(sp, "nobody", 0, 0)


def test_score_is_linear_in_each_argument():
    rng = np.random.default_rng(2)
    d = 6
    h, h2, r, r2, t, t2 = (rng.normal(size=2 * d) for _ in range(6))
    a, b = 0.7, -1.3
    for lhs, rhs in [
        (complex_score(a * h + b * h2, r, t), a * complex_score(h, r, t) + b * complex_score(h2, r, t)),
        (complex_score(h, a * r + b * r2, t), a * complex_score(h, r, t) + b * complex_score(h, r2, t)),
        (complex_score(h, r, a * t + b * t2), a * complex_score(h, r, t) + b * complex_score(h, r, t2)),
    ]:
        assert lhs == pytest.approx(rhs)


@pytest.mark.parametrize("seed", range(100))
def test_bce_gradients(seed):
    rng = np.random.default_rng(seed)
    h, r, t = (rng.normal(size=(4, 6)) for _ in range(3))
    labels = rng.integers(0, 2, 4).astype(float)
    _, gh, gr, gt = bce_loss_and_grads(h, r, t, labels)

    def f():
        return bce_loss_and_grads(h, r, t, labels)[0].sum()

    for analytic, param in ((gh, h), (gr, r), (gt, t)):
        assert rel_error(analytic, numeric_grad(f, param)) <= 1e-4


def test_corruption_changes_exactly_one_slot():
    rng = np.random.default_rng(0)
    pos = np.array([[0, 0, 1], [2, 1, 3]])
    neg = corrupt(pos, 500, (0.4, 0.2, 0.4), 1000, 50, rng)
    base = np.repeat(pos, 500, axis=0)
    changed = (neg != base).sum(axis=1)
    assert changed.max() <= 1
    # which slot was drawn: head 40%, relation 20%, tail 40% (collisions aside)
    slots = np.argmax(neg != base, axis=1)[changed == 1]
    frac = np.bincount(slots, minlength=3) / len(slots)
    assert frac == pytest.approx([0.4, 0.2, 0.4], abs=0.05)


def test_loss_decreases():
    kg, train, _ = kinship()
    sp = train_complex(kg, TrainConfig(dimension=16, epochs=50), triples=train)
    assert sp.losses[-1] < sp.losses[0]


def test_antisymmetric_margin():
    kg = antisymmetric()
    sp = train_complex(kg, TrainConfig(dimension=16, epochs=100))
    margins = [score_triple(sp, f"a{i}", "r", f"b{i}") - score_triple(sp, f"b{i}", "r", f"a{i}")
               for i in range(20)]
    assert np.mean(margins) > 0


def test_deterministic():
    kg, train, _ = kinship()
    cfg = TrainConfig(dimension=8, epochs=5, seed=4)
    one, two = train_complex(kg, cfg, triples=train), train_complex(kg, cfg, triples=train)
    assert np.array_equal(one.ent, two.ent) and np.array_equal(one.rel, two.rel)


def test_regularization_shrinks():
    kg, train, _ = kinship()
    plain = train_complex(kg, TrainConfig(dimension=8, epochs=20), triples=train)
    reg = train_complex(kg, TrainConfig(dimension=8, epochs=20, regularization=0.5),
                        triples=train)
    assert np.linalg.norm(reg.ent) < np.linalg.norm(plain.ent)


def test_empty_graph():
    kg = KnowledgeGraph.from_triples([("a", "p", "b")])
    with pytest.raises(ValueError):
        train_complex(kg, TrainConfig(epochs=1), triples=np.empty((0, 3)))


def test_true_tail_strictly_best_is_rank_one():
    sp = space_from([c2row([1 + 0j]), c2row([2 + 0j]), c2row([-1 + 0j])], [c2row([1 + 0j])])
    ranking, res = rank_entities(sp, 0, 0, "tail", target=1)
    assert [e for e, _ in ranking] == [1, 0, 2]
    assert res.raw_rank == res.filtered_rank == 1


def test_filtered_rank_skips_other_true_tails():
    sp = space_from([c2row([1 + 0j]), c2row([3 + 0j]), c2row([2 + 0j]), c2row([0j])],
                    [c2row([1 + 0j])])
    known = {(0, 0, 1), (0, 0, 2)}
    _, res = rank_entities(sp, 0, 0, "tail", target=2, known=known)
    assert res.raw_rank == 2
    assert res.filtered_rank == 1


def test_head_direction_and_ties():
    sp = space_from([c2row([1 + 0j])] * 3, [c2row([1 + 0j])])
    ranking, res = rank_entities(sp, 2, 0, "head", target=1)
    assert [e for e, _ in ranking] == [0, 1, 2]
    assert res.raw_rank == 2
    assert res.triple == (1, 0, 2)


def test_random_vectors_rank_uniformly():
    rng = np.random.default_rng(0)
    n, queries = 100, 200
    rrs = []
    for q in range(queries):
        sp = space_from(rng.normal(size=(n, 16)), rng.normal(size=(1, 16)))
        _, res = rank_entities(sp, 0, 0, "tail", target=int(rng.integers(n)))
        rrs.append(res.reciprocal_rank)
    ranks = np.arange(1, n + 1)
    mean = random_mrr(n)
    sd = np.sqrt(np.mean(1.0 / ranks ** 2) - mean ** 2) / np.sqrt(queries)
    assert abs(np.mean(rrs) - mean) <= 3 * sd


def test_filtered_never_exceeds_raw():
    kg, train, test = kinship()
    sp = train_complex(kg, TrainConfig(dimension=8, epochs=3), triples=train)
    res = evaluate_link_prediction(sp, test, kg.edge_set())
    assert all(r.filtered_rank <= r.raw_rank for r in res["results"])
    assert res["queries"] == 2 * len(test)


def test_export_round_trip(tmp_path):
    kg, train, _ = kinship()
    sp = train_complex(kg, TrainConfig(dimension=4, epochs=2, dtype="float32"), triples=train)
    write_complex(sp, tmp_path / "e.txt", tmp_path / "r.txt")
    back = read_complex(tmp_path / "e.txt", tmp_path / "r.txt")
    assert back.dim == 4
    assert score_triple(back, "A0", "parent_of", "A1") == pytest.approx(
        score_triple(sp, "A0", "parent_of", "A1"), rel=1e-5)
    emb = sp.entity_space()
    assert emb.dim == 8
