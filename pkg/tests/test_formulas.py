import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parity_transformer.construction.formulas import (
    F0,
    FPRIME0,
    DerivedConstants,
    Gamma_exact,
    attention_gap,
    f_rho,
    gamma_exact,
    layer3_logit,
    scan_length,
    split_strings,
    tau,
    z_value,
)
from parity_transformer.construction.params import ConstructionParams
from parity_transformer.errors import InvalidInputError, RangeError

# (n, Sigma) -> (gamma, Gamma, gap, z) at alpha = 0.6, from a 60-digit direct summation
REFERENCE = {
    (16, 3): (8.6021505376344086, 701852458605.83069, 125635019.28472877, -1.0),
    (16, 5): (9.2378752886836028, 723434278171.57155, 41045153.390502523, -1.0),
    (40, 7): (9.3395597064709807, 5990174444196348.9, 41536690850.13879, -1.0),
    (100, 30): (9.8619329388560158, 5.4659144824957709e19, 1908818801119.2121, 1.0),
}


class TestF:
    def test_values(self):
        assert f_rho(0) == Fraction(11, 21)
        assert f_rho(1) == Fraction(3, 8)

    def test_derivative_at_zero(self):
        h = 1e-6
        assert (f_rho(h) - f_rho(-h)) / (2 * h) == pytest.approx(-100 / 441, abs=1e-9)

    def test_pole(self):
        with pytest.raises(InvalidInputError):
            f_rho(Fraction(-21, 11))


class TestTau:
    def test_small(self):
        assert tau(1) == Fraction(13, 3)
        assert tau(2) == Fraction(9472, 3)

    def test_ratio_decreases_to_one(self):
        r = [tau(n) / Fraction(n) ** 10 for n in range(4, 4097)]
        assert all(a > b > 1 for a, b in zip(r, r[1:]))
        assert float(r[-1]) == pytest.approx(1, abs=2e-3)

    def test_rejects_zero(self):
        with pytest.raises(InvalidInputError):
            tau(0)


class TestConstants:
    def test_derived(self):
        k = DerivedConstants(Fraction(3, 5))
        assert k.C == Fraction(100, 441) * Fraction(3, 5) > 0
        assert all(k.A(n) < 0 for n in range(1, 200))
        assert k.A(1) == -F0 + FPRIME0 * Fraction(3, 5)

    def test_alpha_range(self):
        with pytest.raises(InvalidInputError):
            DerivedConstants(1.5)


class TestGamma:
    def test_all_ones(self):
        assert gamma_exact(7, 7, Fraction(1, 100)) == 10

    def test_single_one(self):
        g = gamma_exact(1, 4, Fraction(1, 100))
        assert g == Fraction(4000, 403)
        assert float(g) == pytest.approx(9.92556, abs=1e-5)

    @given(st.integers(1, 300), st.data())
    def test_range(self, n, data):
        s = data.draw(st.integers(1, n))
        g = gamma_exact(s, n, Fraction(3, 5))
        assert Fraction(10) / Fraction(8, 5) <= g <= 10

    def test_empty_input_undefined(self):
        with pytest.raises(RangeError):
            gamma_exact(0, 5, 0.5)

    def test_Gamma_small(self):
        assert Gamma_exact(7, 1) == 1
        assert Gamma_exact(10, 2) == Fraction(1048577, 1025)

    def test_Gamma_real_exponent_matches_integer_path(self):
        assert float(Gamma_exact(10.0, 30, "ext:100")) == pytest.approx(float(Gamma_exact(10, 30)), rel=1e-25)

    @pytest.mark.parametrize("n", [3, 17, 200])
    def test_Gamma_weighted_average(self, n):
        assert Gamma_exact(7.3, n) <= n**10


class TestLayer3Logit:
    def test_zero_C(self):
        k = DerivedConstants(1e-300)
        assert abs(layer3_logit(3, 10, 5.0, k)) < 1e-280

    @pytest.mark.parametrize("n,s", [(10, 1), (10, 3), (25, 4), (64, 9)])
    def test_equals_scaled_W_difference(self, n, s):
        # with Gamma = tau_n f(rho) the logit is tau_n (W_i - B), W_i = -(f + C/i + A_n)^2, B = -(f + A_n)^2
        alpha = Fraction(3, 5)
        k = DerivedConstants(alpha)
        rho = alpha * (Fraction(1, s) - Fraction(1, n))
        f = f_rho(rho)
        B = -((f + k.A(n)) ** 2)
        for i in range(1, n + 1):
            W = -((f + k.C / i + k.A(n)) ** 2)
            assert layer3_logit(i, n, tau(n) * f, k) == tau(n) * (W - B)

    def test_shift_does_not_change_gap(self):
        i = np.arange(1, 21, dtype=float)
        k = DerivedConstants(0.6)
        L = layer3_logit(i, 20, 3.0e12, k)
        gap = lambda x: x[4] - np.max(np.delete(x, 4))
        assert gap(L + 123456.0) == pytest.approx(gap(L), rel=1e-9)


class TestScan:
    @pytest.mark.parametrize("key", sorted(REFERENCE))
    def test_reference_values(self, key):
        n, s = key
        g_ref, G_ref, gap_ref, z_ref = REFERENCE[key]
        assert float(gamma_exact(s, n, 0.6)) == pytest.approx(g_ref, rel=1e-14)
        assert float(Gamma_exact(gamma_exact(s, n, 0.6), n)) == pytest.approx(G_ref, rel=1e-13)
        gap, z = scan_length(n, [s], 0.6)
        assert float(gap[0]) == pytest.approx(gap_ref, rel=1e-6)
        assert float(z[0]) == z_ref
        gap64, _ = scan_length(n, [s], 0.6, "ext:64")
        assert float(gap64[0]) == pytest.approx(gap_ref, rel=1e-9)

    def test_gap_api(self, params):
        assert float(attention_gap(16, 3, params)) == pytest.approx(REFERENCE[(16, 3)][2], rel=1e-6)
        with pytest.raises(RangeError):
            attention_gap(16, 9, params)

    def test_large_alpha_breaks_the_gap(self):
        gap, _ = scan_length(8, range(1, 9), 0.9)
        assert gap.min() < 0

    def test_z_values(self, params):
        for n in (8, 32, 128, 256):
            assert z_value("0" * (n - 1) + "1", params) < -0.9
        with pytest.raises(RangeError):
            z_value("0" * 9 + "1", params.replace(n_min=11))
        with pytest.raises(RangeError):
            z_value("1" * 10, params)

    def test_z_flips_with_one_bit(self, params):
        rng = np.random.default_rng(0)
        for _ in range(30):
            n = int(rng.integers(params.n_min, 120))
            x = np.zeros(n, dtype=int)
            s = int(rng.integers(1, int(params.c * n)))
            x[rng.choice(n, size=s, replace=False)] = 1
            z0 = z_value(x, params)
            y = x.copy()
            y[np.flatnonzero(x)[0]] = 0
            if y.sum() >= 1:
                assert np.sign(z_value(y, params)) == -np.sign(z0)
            assert -1 <= z0 <= 1


class TestSplit:
    def test_all_zero(self):
        parts = split_strings("0" * 6, 6)
        for r, part in enumerate(parts):
            assert part == [int(i == r) for i in range(6)]

    def test_all_one_M2(self):
        x0, x1 = split_strings("1111", 2)
        assert x0 == [1, 1, 0, 1]
        assert x1 == [1, 1, 1, 0]
        assert (sum(x0) + sum(x1)) % 2 == 0

    def test_parity_identity_and_counts(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            M = int(rng.choice([2, 4, 6, 8]))
            n = int(rng.integers(M, 60))
            x = rng.integers(0, 2, size=n)
            parts = split_strings(x, M)
            assert sum(sum(p) for p in parts) % 2 == x.sum() % 2
            assert all(1 <= sum(p) <= 1 + math.ceil(n / M) for p in parts)
            assert all(set(p) <= {0, 1} for p in parts)

    def test_errors(self):
        with pytest.raises(RangeError):
            split_strings("101", 4)
        with pytest.raises(InvalidInputError):
            split_strings("101101", 3)
