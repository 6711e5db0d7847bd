import math

import numpy as np
import pytest
from scipy import integrate

from drdecomp import DgpConfig, Sample, generate_dgp, load_csv, oracle_truth
from drdecomp.dataset import parse_key_values
from drdecomp.errors import DegenerateSampleError, MissingColumnError, ParseError, ValidationError


class TestSample:
    def test_counts(self, hand_sample):
        s = hand_sample
        assert (s.n, s.n1, s.n0, s.k) == (4, 2, 2, 1)
        assert s.pi == 0.5

    def test_arrays_are_read_only_copies(self):
        y = np.array([1.0, 2.0])
        s = Sample(y, [0, 1], [[0.0], [1.0]])
        y[0] = 99.0
        assert s.y[0] == 1.0
        with pytest.raises(ValueError):
            s.y[0] = 5.0

    @pytest.mark.parametrize(
        "y,d,x",
        [
            ([1.0, 2.0], [0, 2], [[0.0], [1.0]]),
            ([1.0, np.nan], [0, 1], [[0.0], [1.0]]),
            ([1.0, 2.0], [0, 1], [[0.0], [np.inf]]),
            ([1.0, 2.0, 3.0], [0, 1], [[0.0], [1.0]]),
        ],
    )
    def test_invalid(self, y, d, x):
        with pytest.raises(ValidationError):
            Sample(y, d, x)

    def test_default_names_and_relabel(self):
        s = Sample([1.0, 2.0], [0, 1], np.zeros((2, 2)))
        assert s.feature_names == ("x1", "x2")
        r = s.relabel()
        assert r.d.tolist() == [1.0, 0.0]

    def test_require_both_groups(self):
        with pytest.raises(DegenerateSampleError):
            Sample([1.0, 2.0], [1, 1], [[0.0], [1.0]]).require_both_groups()


class TestLoadCsv:
    def test_hand_csv(self, hand_csv):
        s = load_csv(hand_csv, "y", "d", ["x"])
        assert (s.n, s.n1, s.n0) == (4, 2, 2)
        assert s.feature_names == ("x",)

    def test_bad_group_value_cites_row(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("y,d,x\n1,0,0\n2,1,1\n3,2,0\n")
        with pytest.raises(ValidationError, match="row 3"):
            load_csv(p, "y", "d", ["x"])

    def test_missing_column_named(self, hand_csv):
        with pytest.raises(MissingColumnError) as err:
            load_csv(hand_csv, "y", "d", ["age"])
        assert err.value.column == "age"

    def test_parse_error_row_and_column(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("y,d,x\n1,0,0\n2,1,abc\n")
        with pytest.raises(ParseError) as err:
            load_csv(p, "y", "d", ["x"])
        assert (err.value.row, err.value.column) == (2, "x")

    def test_one_hot_drops_smallest_level(self, tmp_path):
        p = tmp_path / "cat.csv"
        p.write_text("y,d,x,edu\n1,0,0.5,hs\n2,1,1.5,college\n3,1,0.1,phd\n4,0,0.2,hs\n")
        s = load_csv(p, "y", "d", ["x", "edu"], one_hot=["edu"])
        assert s.feature_names == ("x", "edu=hs", "edu=phd")
        np.testing.assert_array_equal(s.x[:, 1], [1, 0, 0, 1])
        np.testing.assert_array_equal(s.x[:, 2], [0, 0, 1, 0])

    def test_empty_file(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("")
        with pytest.raises(ValidationError):
            load_csv(p, "y", "d", [])


class TestDgpConfig:
    def test_figure1_defaults(self):
        c = DgpConfig.figure1()
        assert (c.intercept1, c.slope1, c.intercept0, c.slope0) == (0.3, 0.42, 0.2, 0.2)
        assert c.sd1 == pytest.approx(0.1) and c.sd0 ** 2 == pytest.approx(0.015)
        assert (c.logit_a, c.logit_b) == (-4.0, 8.0)

    def test_truth_functions(self):
        c = DgpConfig.figure1()
        assert c.propensity(0.5) == pytest.approx(0.5)
        assert c.g(1, 0.5) == pytest.approx(0.51)
        assert c.g(0, 0.5) == pytest.approx(0.3)
        assert c.g2(0.5) == pytest.approx(0.405)

    @pytest.mark.parametrize("kw", [{"sd1": 0.0}, {"x_low": 1.0}, {"n": 1}, {"seed": -1}])
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            DgpConfig(**kw)

    def test_roundtrip_file(self, tmp_path):
        c = DgpConfig.figure1(n=321, seed=5, curvature1=0.2)
        c.save(tmp_path / "c.txt")
        assert DgpConfig.load(tmp_path / "c.txt") == c

    def test_from_variances(self):
        c = DgpConfig.from_variances(0.01, 0.015)
        assert c.sd1 == pytest.approx(0.1)
        assert c.sd0 == pytest.approx(math.sqrt(0.015))

    def test_parse_key_values(self):
        assert parse_key_values("a = 1\n# c\n\nb=x # note\n") == {"a": "1", "b": "x"}
        with pytest.raises(ValidationError):
            parse_key_values("novalue\n")
        with pytest.raises(ValidationError):
            DgpConfig.from_mapping({"bogus": "1"})


class TestGenerate:
    def test_reproducible(self):
        c = DgpConfig.figure1(n=200, seed=9)
        a, _ = generate_dgp(c, with_truth=False)
        b, _ = generate_dgp(c, with_truth=False)
        assert a.y.tobytes() == b.y.tobytes() and a.d.tobytes() == b.d.tobytes()

    def test_group_gap_positive(self):
        s, _ = generate_dgp(DgpConfig.figure1(n=5000, seed=1), with_truth=False)
        assert s.y[s.d == 1].mean() > s.y[s.d == 0].mean()

    def test_degenerate_draw_errors(self):
        with pytest.raises(DegenerateSampleError):
            generate_dgp(DgpConfig(n=10, logit_a=-60.0, logit_b=0.0))

    def test_noise_scale(self):
        s, _ = generate_dgp(DgpConfig.figure1(n=40_000, seed=2), with_truth=False)
        c = DgpConfig.figure1()
        r1 = s.y[s.d == 1] - c.g(1, s.x[s.d == 1, 0])
        r0 = s.y[s.d == 0] - c.g(0, s.x[s.d == 0, 0])
        assert r1.var() == pytest.approx(0.01, rel=0.05)
        assert r0.var() == pytest.approx(0.015, rel=0.05)


class TestOracle:
    def test_identical_outcomes_zero(self):
        t = oracle_truth(DgpConfig(intercept1=0.2, slope1=0.2, sd1=0.3, sd0=0.3))
        assert all(abs(v) < 1e-12 for v in t.delta.values())

    def test_constant_propensity_collapses(self):
        t = oracle_truth(DgpConfig(logit_a=0.0, logit_b=0.0))
        assert abs(t.delta[0] - t.delta[1]) < 1e-8
        assert abs(t.delta[2] - t.delta[0]) < 1e-8
        assert t.delta[0] == pytest.approx(0.1 + 0.22 * 0.5)

    def test_against_adaptive_quadrature(self):
        c = DgpConfig.figure1()
        p = c.propensity
        tau = lambda x: c.g(1, x) - c.g(0, x)  # noqa: E731
        quad = lambda f: integrate.quad(f, 0.0, 1.0, epsabs=1e-13, epsrel=1e-13)[0]  # noqa: E731
        pi = quad(p)
        ex1 = quad(lambda x: x * p(x)) / pi
        d0 = quad(lambda x: tau(x) * p(x)) / pi
        d1 = quad(lambda x: tau(x) * (1 - p(x))) / (1 - pi)
        d2 = quad(lambda x: tau(x) * p(x) * (1 - p(x))) * (1 / pi + 1 / (1 - pi))
        t = oracle_truth(c)
        assert t.pi == pytest.approx(0.5, abs=1e-12)
        assert t.delta[0] == pytest.approx(d0, abs=1e-9)
        assert t.delta[0] == pytest.approx(0.1 + 0.22 * ex1, abs=1e-9)
        assert t.delta[1] == pytest.approx(d1, abs=1e-9)
        assert t.delta[2] == pytest.approx(d2, abs=1e-9)
        assert t.delta[3] == pytest.approx((1 - pi) * d0 + pi * d1, abs=1e-9)

    def test_ordering_figure1(self):
        t = oracle_truth(DgpConfig.figure1())
        assert t.delta[0] > t.delta[1] > t.delta[2] > 0

    def test_monte_carlo(self):
        # conditional mean of tau over D=1 draws converges to delta_0
        c = DgpConfig.figure1(n=1_000_000, seed=4)
        s, t = generate_dgp(c)
        x1 = s.x[s.d == 1, 0]
        tau = c.g(1, x1) - c.g(0, x1)
        assert abs(tau.mean() - t.delta[0]) < 3 * tau.std() / math.sqrt(tau.size)

    def test_explained_adds_up(self):
        t = oracle_truth(DgpConfig.figure1())
        for r in range(4):
            assert t.explained[r] + t.delta[r] == pytest.approx(t.delta_obs, abs=1e-10)
