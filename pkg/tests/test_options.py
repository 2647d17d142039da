import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from trajemp import options as O
from trajemp.evaluation import baseline_random, geometric_median


def test_space_size_and_entropy():
    assert O.OptionSpace(4).size == 16
    assert O.entropy(O.OptionSpace(1)) == pytest.approx(0.6931, abs=1e-4)
    assert O.entropy(O.OptionSpace(4)) == pytest.approx(2.7726, abs=1e-4)
    assert O.entropy(O.OptionSpace(8)) == pytest.approx(5.5452, abs=1e-4)
    with pytest.raises(ValueError):
        O.OptionSpace(0)


def test_bit_int_round_trip():
    for v in range(256):
        bits = O.int_to_bits(v, 8)
        assert O.bits_to_int(bits) == v
    assert list(O.int_to_bits(1, 4)) == [0, 0, 0, 1]


class TestDraw:
    def test_single_bit_frequency(self):
        rng = np.random.default_rng(0)
        ones = sum(int(O.draw(O.OptionSpace(1), rng)[0]) for _ in range(100_000))
        assert 0.49 <= ones / 100_000 <= 0.51

    def test_all_sixteen_words_appear(self):
        rng = np.random.default_rng(1)
        seen = {O.bits_to_int(O.draw(O.OptionSpace(4), rng)) for _ in range(100_000)}
        assert seen == set(range(16))

    def test_chi_square_b8(self):
        rng = np.random.default_rng(2)
        space = O.OptionSpace(8)
        counts = np.bincount([O.bits_to_int(O.draw(space, rng)) for _ in range(100_000)], minlength=256)
        assert stats.chisquare(counts).pvalue > 1e-3


class TestLogProb:
    def test_half_probabilities(self):
        assert O.log_prob([0.5] * 4, [1, 0, 1, 1]) == pytest.approx(4 * math.log(0.5))

    def test_hand_value(self):
        assert O.log_prob([0.9, 0.1], [1, 0]) == pytest.approx(2 * math.log(0.9))
        assert O.log_prob([0.9, 0.1], [1, 0]) == pytest.approx(-0.2107, abs=1e-4)

    def test_clamp_bound(self):
        word = np.array([1, 0, 1, 0, 1])
        probs = np.where(word == 1, 1.0, 0.0)  # clamped to 1-1e-6 / 1e-6
        assert O.log_prob(probs, word) == pytest.approx(5 * math.log1p(-1e-6), rel=1e-9)
        assert math.isfinite(O.log_prob(probs, 1 - word))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            O.log_prob([0.5, 0.5], [1, 0, 1])

    @pytest.mark.parametrize("b", range(1, 11))
    def test_likelihoods_sum_to_one(self, b):
        probs = np.random.default_rng(b).uniform(0, 1, size=b)
        total = sum(math.exp(O.log_prob(probs, w)) for w in itertools.product((0, 1), repeat=b))
        assert total == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=8))
def test_thresholded_word_maximizes_likelihood(probs):
    best = O.most_likely(probs)
    best_ll = O.log_prob(probs, best)
    for w in itertools.product((0, 1), repeat=len(probs)):
        assert O.log_prob(probs, w) <= best_ll + 1e-12


def test_tie_goes_to_one():
    assert list(O.most_likely([0.5, 0.49, 0.51])) == [1, 0, 1]


class TestChannel:
    def test_match_rewards_and_redraws(self):
        space = O.OptionSpace(4)
        ch = O.new_channel(space, np.random.default_rng(0))
        word = ch.current.copy()
        wrong = word.copy()
        wrong[2] ^= 1
        r, ch = O.check_guess(ch, wrong)
        assert r == 0 and np.array_equal(ch.current, word) and ch.steps_since_draw == 1
        r, ch = O.check_guess(ch, word)
        assert r == 1 and ch.steps_since_draw == 0 and ch.total_successes == 1 and ch.last_interval == 2

    def test_length_mismatch(self):
        ch = O.new_channel(O.OptionSpace(4), np.random.default_rng(0))
        with pytest.raises(ValueError):
            O.check_guess(ch, np.zeros(3, dtype=np.int8))

    def test_success_count_matches_rewards(self):
        rng = np.random.default_rng(3)
        ch = O.new_channel(O.OptionSpace(2), np.random.default_rng(4))
        total = 0
        for _ in range(2000):
            r, ch = O.check_guess(ch, rng.integers(0, 2, size=2))
            total += r
        assert ch.total_successes == total > 0


def discrete_ks_pvalue(sample, cdf):
    """One-sample KS on integer support: sup distance over support points, conservative p-value."""
    sample = np.sort(np.asarray(sample))
    support = np.arange(1, sample[-1] + 1)
    ecdf = np.searchsorted(sample, support, side="right") / sample.size
    d = np.max(np.abs(ecdf - cdf(support)))
    return float(stats.kstwo.sf(d, sample.size))


def geometric_sample_median(b, n, seed):
    # independent oracle: inverse-CDF sampling of Geometric(2^-b)
    u = np.random.default_rng(seed).random(n)
    return np.median(np.ceil(np.log1p(-u) / np.log1p(-(2.0**-b))))


class TestUniformGuesser:
    def test_geometric_median_formula(self):
        assert geometric_median(4) == 11
        assert geometric_median(8) == 178
        assert geometric_median(1) == 1
        for b in range(1, 9):
            p = 2.0**-b
            m = geometric_median(b)
            assert 1 - (1 - p) ** m >= 0.5 and (m == 1 or 1 - (1 - p) ** (m - 1) < 0.5)

    def test_channel_guessing_median(self):
        # guesses go through check_guess itself rather than the vectorised baseline
        rng = np.random.default_rng(9)
        ch = O.new_channel(O.OptionSpace(4), np.random.default_rng(10))
        intervals = []
        while len(intervals) < 4096:
            r, ch = O.check_guess(ch, rng.integers(0, 2, size=4))
            if r:
                intervals.append(ch.last_interval)
        assert abs(np.median(intervals) - 11) <= 1

    def test_ks_against_geometric(self):
        rep = baseline_random(O.OptionSpace(4), 100_000, seed=0)
        assert discrete_ks_pvalue(rep.intervals, stats.geom(1 / 16).cdf) > 1e-3

    def test_ks_detects_wrong_law(self):
        rep = baseline_random(O.OptionSpace(4), 100_000, seed=0)
        assert discrete_ks_pvalue(rep.intervals, stats.geom(1 / 15).cdf) < 1e-3

    def test_oracle_agrees(self):
        assert abs(geometric_sample_median(4, 100_000, 0) - 11) <= 1
