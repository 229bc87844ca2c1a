import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semuq.entropy import (
    ClusterDistribution,
    EntailmentLabel,
    OracleError,
    SemanticClustering,
    bidirectional_equivalent,
    cluster,
    cluster_distribution,
    lnpe,
    predictive_entropy,
    se_score,
    semantic_entropy,
)

from helpers import ConstOracle, TableOracle, make_response, make_set

E, N = EntailmentLabel.ENTAILMENT, EntailmentLabel.NEUTRAL


def test_label_parse():
    assert EntailmentLabel.parse("ENTAILMENT") is E
    assert EntailmentLabel.parse(" Neutral ") is N
    with pytest.raises(ValueError, match="'maybe'"):
        EntailmentLabel.parse("maybe")


def test_bidirectional_reflexive():
    assert bidirectional_equivalent("same", "same", "q", TableOracle())


def test_bidirectional_one_way_is_false():
    oracle = TableOracle({("a", "b"): E, ("b", "a"): N})
    assert not bidirectional_equivalent("a", "b", "q", oracle)
    assert not bidirectional_equivalent("b", "a", "q", oracle)


def test_bidirectional_short_circuits():
    oracle = TableOracle()
    bidirectional_equivalent("a", "b", "q", oracle)
    assert oracle.calls == 1


def test_oracle_failure_names_pair():
    class Broken:
        def judge(self, p, h, question=""):
            raise TimeoutError("slow")

    with pytest.raises(OracleError, match="'x', 'y'"):
        bidirectional_equivalent("x", "y", "q", Broken())


def test_cluster_examples():
    oracle = TableOracle({("s1", "s0"): E, ("s0", "s1"): E})
    assert cluster(["s0", "s1", "s2"], "q", oracle).clusters == ((0, 1), (2,))
    assert cluster(list("abcde"), "q", ConstOracle(E)).clusters == ((0, 1, 2, 3, 4),)
    assert cluster(list("abcde"), "q", ConstOracle(N)).clusters == tuple((i,) for i in range(5))


def test_cluster_compares_against_first_member():
    # b~a and c~b but not c~a: c must not join the cluster founded by a
    both = {("a", "b"): E, ("b", "a"): E, ("b", "c"): E, ("c", "b"): E}
    assert cluster(["a", "b", "c"], "q", TableOracle(both)).clusters == ((0, 1), (2,))


def test_cluster_empty():
    with pytest.raises(ValueError):
        cluster([], "q", ConstOracle(E))


def test_clustering_validation():
    with pytest.raises(ValueError, match="partition"):
        SemanticClustering(((0, 2),))
    with pytest.raises(ValueError, match="empty"):
        SemanticClustering(((0,), ()))


def responses(*joints):
    return [make_response(f"r{i}", (j,)) for i, j in enumerate(joints)]


def test_distribution_examples():
    two = SemanticClustering(((0,), (1,)))
    assert cluster_distribution(two, responses(-1, -1)).probs == (0.5, 0.5)
    c = SemanticClustering(((0, 1), (2,)))
    lik = cluster_distribution(c, responses(-1, -1, -2)).probs
    oracle = [2 * math.exp(-1), math.exp(-2)]
    oracle = [x / sum(oracle) for x in oracle]
    assert lik == pytest.approx(oracle, abs=1e-15)
    assert lik == pytest.approx((0.8446, 0.1554), abs=5e-5)
    assert cluster_distribution(c, responses(-1, -1, -2), "discrete").probs == pytest.approx((2 / 3, 1 / 3))


def test_distribution_extreme_logprobs_stay_finite():
    c = SemanticClustering(((0,), (1,)))
    probs = cluster_distribution(c, responses(-5000.0, -5001.0)).probs
    assert probs == pytest.approx((1 / (1 + math.exp(-1)), math.exp(-1) / (1 + math.exp(-1))))


def test_distribution_length_normalized():
    c = SemanticClustering(((0,), (1,)))
    rs = [make_response("a", (-1.0, -1.0)), make_response("b", (-1.0,))]
    assert cluster_distribution(c, rs, length_normalized=True).probs == pytest.approx((0.5, 0.5))


def test_distribution_needs_logprobs():
    c = SemanticClustering(((0,), (1,)))
    with pytest.raises(ValueError, match="no token log-probabilities"):
        cluster_distribution(c, [make_response("a", ()), make_response("b", ())])
    assert cluster_distribution(c, [make_response("a", ()), make_response("b", ())], "discrete").probs == (0.5, 0.5)


def test_distribution_sum_check():
    with pytest.raises(ValueError, match="sum to"):
        ClusterDistribution((0.5, 0.4))


def test_semantic_entropy_examples():
    assert semantic_entropy(ClusterDistribution((1.0,))) == 0.0
    assert semantic_entropy(ClusterDistribution((0.25,) * 4)) == pytest.approx(math.log(4), abs=1e-12)
    c = SemanticClustering(((0, 1), (2,)))
    dist = cluster_distribution(c, responses(-1, -1, -2))
    assert semantic_entropy(dist) == pytest.approx(0.4321, abs=5e-4)


def test_predictive_entropy_examples():
    assert predictive_entropy(make_set(["a"], [(-0.5, -0.5)])) == 1.0
    assert predictive_entropy(make_set(["a", "b"], [(-1.0,), (-1.5, -1.5)])) == 2.0
    assert predictive_entropy(make_set(["a", "b"], [(0.0, 0.0), (0.0,)])) == 0.0


def test_lnpe_examples():
    assert lnpe(make_set(["a"], [(-0.5, -0.5)])) == 0.5
    # per-token means 0.2 and 0.6
    assert lnpe(make_set(["a", "b"], [(-0.2, -0.2), (-0.6, -0.6, -0.6)])) == pytest.approx(0.4, abs=1e-15)
    assert lnpe(make_set(["a", "b"], [(0.0,), (0.0, 0.0)])) == 0.0


def test_token_less_sets_rejected():
    gen = make_set(["a", "b"], [(), ()])
    with pytest.raises(ValueError, match="empty token list"):
        predictive_entropy(gen)
    with pytest.raises(ValueError, match="empty token list"):
        lnpe(gen)


def test_se_score_single_meaning_is_zero():
    assert se_score(make_set(["Paris"] * 5), "q", ConstOracle(E)) == 0.0
    assert se_score(make_set(list("abcde")), "q", ConstOracle(N), "discrete") == pytest.approx(math.log(5))


lp = st.floats(min_value=-30, max_value=0, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(lp, min_size=1, max_size=6), min_size=1, max_size=8))
def test_pe_lnpe_nonnegative_and_single_token_equal(seqs):
    gen = make_set([f"r{i}" for i in range(len(seqs))], [tuple(s) for s in seqs])
    assert predictive_entropy(gen) >= 0 and lnpe(gen) >= 0
    ones = make_set([f"r{i}" for i in range(len(seqs))], [(s[0],) for s in seqs])
    assert predictive_entropy(ones) == pytest.approx(lnpe(ones), abs=1e-12)


@st.composite
def clustered(draw):
    m = draw(st.integers(1, 8))
    labels = draw(st.lists(st.integers(0, 3), min_size=m, max_size=m))
    groups: dict[int, list[int]] = {}
    for i, g in enumerate(labels):
        groups.setdefault(g, []).append(i)
    clusters = tuple(tuple(v) for v in groups.values())
    joints = draw(st.lists(lp, min_size=m, max_size=m))
    return SemanticClustering(clusters), responses(*joints)


@settings(max_examples=150, deadline=None)
@given(clustered(), st.sampled_from(["likelihood", "discrete"]))
def test_entropy_bounds(case, mode):
    c, rs = case
    dist = cluster_distribution(c, rs, mode)
    assert math.fsum(dist.probs) == pytest.approx(1.0, abs=1e-12)
    h = semantic_entropy(dist)
    assert -1e-12 <= h <= math.log(c.k) + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(["x", "y", "z"]), min_size=1, max_size=8))
def test_cluster_partitions_and_matches_equality_oracle(texts):
    c = cluster(texts, "q", TableOracle())
    assert c.m == len(texts)
    assert c.k == len(set(texts))
    for members in c.clusters:
        assert len({texts[i] for i in members}) == 1
