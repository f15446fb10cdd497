import numpy as np
import pytest
from conftest import random_network, random_params, random_states, random_symptoms
from oracles import exact_marginals, joint_log_density

from gchmm.data import MISSING, BetaHyperParams, DynamicNetwork, exposure_counts
from gchmm.errors import DomainError, IntegrityError
from gchmm.gibbs import (UNDEFINED, CountStatistics, GibbsConfig, GibbsSampler, approx_decomposition_terms,
                         count_statistics, decomposition_terms, full_conditional, infection_probability,
                         run_gibbs, sample_aux_source, sample_emissions_and_impute, sample_hidden_state,
                         sample_infection_params, sample_initial_rate, source_probabilities,
                         transmit_source_probabilities)
from gchmm.model import TRANSMIT, InfectionParams


def hom(N, S, g, a, b, pi, theta):
    return InfectionParams.homogeneous(N, g, a, b, pi, np.broadcast_to(theta, (2, S)).copy())


def consistent_sources(rng, X, G, mode):
    """Random valid source labels for the 0->1 cells of ``X``."""
    N, T1 = X.shape
    R = np.full((N, T1 - 1), UNDEFINED, dtype=np.int32)
    C = exposure_counts(X, G)[:, 1:]
    for n, t in np.argwhere((X[:, :-1] == 0) & (X[:, 1:] == 1)):
        src = [m for m in G.neighbors(n, t + 1) if X[m, t] == 1]
        if mode == TRANSMIT:
            R[n, t] = rng.choice([0] + [m + 1 for m in src])
        else:
            R[n, t] = 1 if C[n, t] == 0 else rng.choice([1, 2, 3])
    return R


class TestInfectionProbability:
    def test_outside_only(self):
        assert infection_probability(0.1, 0.2, 0) == pytest.approx(0.1, abs=1e-15)

    def test_receive(self):
        assert infection_probability(0.1, 0.2, 2) == pytest.approx(0.424, abs=1e-15)

    def test_transmit(self):
        assert infection_probability(0.1, neighbor_betas=[0.2, 0.5]) == pytest.approx(0.64, abs=1e-15)


class TestDecomposition:
    def test_hand_example(self):
        np.testing.assert_allclose(source_probabilities(0.1, 0.2, 1), [0.08 / 0.28, 0.18 / 0.28, 0.02 / 0.28])
        np.testing.assert_allclose(source_probabilities(0.1, 0.2, 1), [0.285714, 0.642857, 0.071429], atol=1e-6)

    def test_no_contacts(self):
        np.testing.assert_array_equal(source_probabilities(0.3, 0.4, 0), [1, 0, 0])

    def test_drop_both(self):
        np.testing.assert_allclose(source_probabilities(0.1, 0.2, 1, drop_both=True), [0.08 / 0.26, 0.18 / 0.26, 0])

    def test_transmit_no_outside_mass(self):
        np.testing.assert_array_equal(transmit_source_probabilities(0.0, [0.3]), [0, 1])

    def test_probabilities_sum_to_one(self, rng):
        for _ in range(500):
            a, b = rng.random(2)
            C = int(rng.integers(0, 12))
            p = source_probabilities(a, b, C)
            assert np.all(p >= 0) and abs(p.sum() - 1) <= 1e-12

    def test_exact_for_one_contact(self):
        grid = np.linspace(0.01, 0.99, 99)
        a, b = np.meshgrid(grid, grid)
        total = sum(decomposition_terms(a, b, 1))
        assert np.max(np.abs(total - infection_probability(a, b, 1))) <= 1e-15

    def test_taylor_bound(self):
        grid = np.linspace(0.0005, 0.02, 40)
        a, b = np.meshgrid(grid, grid)
        for C in range(1, 12):
            inside = decomposition_terms(a, b, C)[1]
            assert np.all(np.abs(inside - C * (1 - a) * b) <= 2 * C ** 2 * b ** 2)

    def test_first_order_error_flat_in_alpha(self):
        alphas = np.linspace(0.01, 0.99, 99)
        for C in range(2, 12):
            for b in (0.05, 0.2, 0.5):
                err = sum(approx_decomposition_terms(alphas, b, C)) - infection_probability(alphas, b, C)
                # the gap is C*b - 1 + (1-b)^C whatever alpha is
                np.testing.assert_allclose(err, C * b - 1 + (1 - b) ** C, rtol=0, atol=1e-12)


class TestSampleAuxSource:
    def test_unexposed_cells_are_outside(self, rng):
        G = DynamicNetwork.empty(3, 4)
        X = random_states(rng, 3, 4, 0.5)
        p = random_params(rng, 3, 1)
        R = sample_aux_source(X, p, G, rng)
        inf = (X[:, :-1] == 0) & (X[:, 1:] == 1)
        assert np.all(R[inf] == 1) and np.all(R[~inf] == UNDEFINED)
        Rt = sample_aux_source(X, p, G, rng, TRANSMIT)
        assert np.all(Rt[inf] == 0)

    def test_transmit_labels_are_sources(self, rng):
        for _ in range(20):
            G = random_network(rng, 5, 5, 0.5)
            X = random_states(rng, 5, 5, 0.5)
            R = sample_aux_source(X, random_params(rng, 5, 1), G, rng, TRANSMIT)
            count_statistics(X, R, G, TRANSMIT)   # raises on an invalid label

    def test_receive_frequencies(self):
        G = DynamicNetwork(2, [[(0, 1)]])
        X = np.array([[0, 1], [1, 1]], dtype=np.int8)
        p = hom(2, 1, .3, .1, .2, .5, .5)
        rng = np.random.default_rng(0)
        labels = [sample_aux_source(X, p, G, rng, drop_both=False)[0, 0] for _ in range(20000)]
        freq = np.bincount(labels, minlength=4)[1:] / len(labels)
        np.testing.assert_allclose(freq, source_probabilities(.1, .2, 1), atol=0.01)

    def test_transmit_frequencies(self):
        G = DynamicNetwork(3, [[(0, 1), (0, 2)]])
        X = np.array([[0, 1], [1, 1], [1, 1]], dtype=np.int8)
        p = InfectionParams([.3] * 3, [.2] * 3, [.1, .3, .6], .5, np.full((2, 1), .5))
        rng = np.random.default_rng(1)
        labels = [sample_aux_source(X, p, G, rng, TRANSMIT)[0, 0] for _ in range(20000)]
        freq = np.bincount(labels, minlength=4)[[0, 2, 3]] / len(labels)
        np.testing.assert_allclose(freq, transmit_source_probabilities(.2, [.3, .6]), atol=0.01)


class TestCountStatistics:
    def test_hand_row(self):
        X = np.array([[1, 1, 0, 0, 1]], dtype=np.int8)
        R = np.array([[UNDEFINED, UNDEFINED, UNDEFINED, 1]])
        c = count_statistics(X, R, DynamicNetwork.empty(1, 4))
        assert (c.c11[0], c.c10[0], c.c00[0], c.c01[0]) == (1, 1, 1, 1)

    def test_no_infections(self):
        X = np.array([[1, 1, 0, 0]], dtype=np.int8)
        c = count_statistics(X, np.full((1, 3), UNDEFINED), DynamicNetwork.empty(1, 3))
        assert c.r13[0] == c.r2[0] == c.r23[0] == 0

    def test_source_off_infection(self):
        X = np.array([[0, 0]], dtype=np.int8)
        with pytest.raises(IntegrityError):
            count_statistics(X, np.array([[1]]), DynamicNetwork.empty(1, 1))

    def test_missing_source(self):
        X = np.array([[0, 1]], dtype=np.int8)
        with pytest.raises(IntegrityError):
            count_statistics(X, np.array([[UNDEFINED]]), DynamicNetwork.empty(1, 1))

    @pytest.mark.parametrize("mode", ["receive", TRANSMIT])
    def test_brute_force_recount(self, rng, mode):
        for _ in range(30):
            N, T = 4, 5
            G = random_network(rng, N, T, 0.5)
            X = random_states(rng, N, T, 0.5)
            R = consistent_sources(rng, X, G, mode)
            c = count_statistics(X, R, G, mode)
            ref = {k: np.zeros(N, dtype=np.int64) for k in
                   ("c00", "c01", "c10", "c11", "r13", "r2", "r23", "r_not23", "r0", "r_not0", "r_is_n", "r_not_n")}
            for n in range(N):
                for t in range(T):
                    a, b = X[n, t], X[n, t + 1]
                    ref[f"c{a}{b}"][n] += 1
                    nb = [m for m in range(N) if G.adjacency[t + 1, n, m]]
                    inf_nb = [m for m in nb if X[m, t] == 1]
                    r = R[n, t]
                    if mode == "receive":
                        ref["r13"][n] += r in (1, 3)
                        ref["r2"][n] += r == 2
                        ref["r23"][n] += r in (2, 3)
                        if r == 1 or (a == 0 and b == 0):
                            ref["r_not23"][n] += len(inf_nb)
                    else:
                        ref["r0"][n] += r == 0
                        ref["r_not0"][n] += r > 0
                        if r > 0:
                            ref["r_is_n"][r - 1] += 1
                        if r == 0 or (a == 0 and b == 0):
                            for m in inf_nb:
                                ref["r_not_n"][m] += 1
            keys = ["c00", "c01", "c10", "c11"] + (["r13", "r2", "r23", "r_not23"] if mode == "receive"
                                                   else ["r0", "r_not0", "r_is_n", "r_not_n"])
            for k in keys:
                np.testing.assert_array_equal(getattr(c, k), ref[k], err_msg=k)
            if mode == "receive":
                np.testing.assert_array_equal(c.c01, c.r13 + c.r2)

    def test_sum_and_scale(self, rng):
        G = random_network(rng, 3, 4)
        X = random_states(rng, 3, 4)
        c = count_statistics(X, consistent_sources(rng, X, G, "receive"), G)
        d = c + c.scaled(2.0)
        np.testing.assert_array_equal(d.c00, 3 * c.c00)
        assert isinstance(d, CountStatistics) and d.mode == "receive"


class TestBetaPosteriors:
    def empty_counts(self, N=1):
        z = np.zeros(N, dtype=np.int64)
        return CountStatistics(z, z, z, z, r13=z, r2=z, r23=z, r_not23=z)

    def test_flat_prior(self):
        rng = np.random.default_rng(0)
        draws = np.array([sample_infection_params(self.empty_counts(), rng=rng) for _ in range(20000)])
        np.testing.assert_allclose(draws.mean(0).ravel(), 0.5, atol=0.01)
        np.testing.assert_allclose(draws.var(0).ravel(), 1 / 12, atol=0.005)

    def test_gamma_counts(self):
        c = self.empty_counts()
        c.c10 = np.array([1])
        c.c11 = np.array([1])
        rng = np.random.default_rng(1)
        g = np.array([sample_infection_params(c, rng=rng)[0][0] for _ in range(20000)])
        assert abs(g.mean() - 0.5) < 0.01 and abs(g.var() - 1 / 20) < 0.005   # Beta(2, 2)

    def test_homogeneous_pool(self):
        z = np.zeros(3, dtype=np.int64)
        c = CountStatistics(np.array([5, 2, 3]), z, np.array([1, 2, 0]), np.array([4, 0, 1]),
                            r13=z, r2=z, r23=z, r_not23=z)
        h = BetaHyperParams(a_gamma=2.0, b_gamma=3.0)
        rng = np.random.default_rng(2)
        g = np.array([sample_infection_params(c, rng=rng, hyper=h, homogeneous=True)[0] for _ in range(10000)])
        assert np.all(g == g[:, :1])
        assert abs(g.mean() - (2 + 3) / (2 + 3 + 3 + 5)) < 0.01

    def test_initial_rate(self):
        rng = np.random.default_rng(3)
        X = np.array([[1], [0], [0], [1]])
        d = np.array([sample_initial_rate(X, BetaHyperParams(), rng) for _ in range(20000)])
        assert abs(d.mean() - 0.5) < 0.01 and abs(d.var() - 1 / 28) < 0.005   # Beta(3, 3)

    def test_initial_rate_all_infected(self):
        rng = np.random.default_rng(4)
        h = BetaHyperParams(a_pi=2.0, b_pi=5.0)
        d = np.array([sample_initial_rate(np.ones((4, 1)), h, rng) for _ in range(20000)])
        assert abs(d.mean() - 6 / 11) < 0.01    # Beta(2 + 4, 5)

    def test_emission_one_cell(self):
        rng = np.random.default_rng(5)
        X = np.array([[0, 1]])
        Y = np.array([[[1]]], dtype=np.int8)
        th = np.array([sample_emissions_and_impute(X, Y, None, rng)[0] for _ in range(20000)])
        assert abs(th[:, 1, 0].mean() - 2 / 3) < 0.01    # Beta(2, 1)
        assert abs(th[:, 0, 0].mean() - 1 / 2) < 0.01    # no data: prior

    def test_impute_degenerate_emission(self):
        rng = np.random.default_rng(6)
        X = np.array([[0, 1, 1]])
        Y = np.array([[[1], [MISSING]]], dtype=np.int8)
        h = BetaHyperParams(a_1=1e9, b_1=1e-9)
        theta, Yi = sample_emissions_and_impute(X, Y, h, rng)
        assert Yi[0, 1, 0] == 1 and Yi[0, 0, 0] == 1
        assert Y[0, 1, 0] == MISSING   # the input is not modified


class TestFullConditional:
    @pytest.mark.parametrize("interp", ["receive", TRANSMIT])
    def test_joint_ratio_oracle(self, rng, interp):
        for _ in range(60):
            N, T = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            G = random_network(rng, N, T, 0.6)
            p = random_params(rng, N, 2)
            Y = random_symptoms(rng, N, T, 2)
            X = random_states(rng, N, T, 0.5)
            n, t = int(rng.integers(N)), int(rng.integers(T + 1))
            X0, X1 = X.copy(), X.copy()
            X0[n, t], X1[n, t] = 0, 1
            l0 = joint_log_density(X0, Y, G, p, interp)
            l1 = joint_log_density(X1, Y, G, p, interp)
            expected = 1 / (1 + np.exp(l0 - l1))
            assert abs(full_conditional(X, Y, p, G, n, t, interp) - expected) <= 1e-9

    def test_evidence_pins_state(self):
        p = hom(1, 2, .3, .2, .2, .3, [[0.0, 0.0], [1.0, 1.0]])
        Y = np.ones((1, 2, 2), dtype=np.int8)
        X = np.zeros((1, 3), dtype=np.int8)
        assert full_conditional(X, Y, p, DynamicNetwork.empty(1, 2), 0, 1) == 1.0

    def test_symmetric(self):
        p = hom(1, 1, .5, .5, .5, .5, .5)
        X = np.zeros((1, 2), dtype=np.int8)
        assert full_conditional(X, np.ones((1, 1, 1), dtype=np.int8), p, DynamicNetwork.empty(1, 1), 0, 1) == 0.5

    def test_sample_updates_in_place(self, rng):
        p = hom(1, 1, .3, .2, .2, .3, [[0.0], [1.0]])
        X = np.zeros((1, 2), dtype=np.int8)
        assert sample_hidden_state(X, np.ones((1, 1, 1), dtype=np.int8), p, DynamicNetwork.empty(1, 1), 0, 1, rng) == 1
        assert X[0, 1] == 1


class TestRunGibbs:
    def test_flat_single_site(self):
        p = hom(1, 1, .5, .5, .5, .5, .5)
        res = run_gibbs(np.ones((1, 1, 1), dtype=np.int8), DynamicNetwork.empty(1, 1),
                        config=GibbsConfig(iterations=20000, known_params=p), rng=0)
        assert abs(res.posterior_x[0, 1] - 0.5) < 0.02

    def test_two_point_posterior(self, rng):
        for _ in range(3):
            G = DynamicNetwork.empty(1, 1)
            p = random_params(rng, 1, 2)
            Y = random_symptoms(rng, 1, 1, 2, 0.0)
            res = run_gibbs(Y, G, config=GibbsConfig(iterations=20000, known_params=p), rng=1)
            np.testing.assert_allclose(res.posterior_x, exact_marginals(Y, G, p), atol=0.01)

    def test_deterministic_replay(self, rng):
        G = random_network(rng, 5, 6)
        Y = random_symptoms(rng, 5, 6, 2)
        cfg = GibbsConfig(iterations=30)
        a = run_gibbs(Y, G, config=cfg, rng=7)
        b = run_gibbs(Y, G, config=GibbsConfig(iterations=30), rng=7)
        np.testing.assert_array_equal(a.posterior_x, b.posterior_x)
        for d1, d2 in zip(a.param_draws, b.param_draws):
            np.testing.assert_array_equal(d1["gamma"], d2["gamma"])

    def test_burnin_and_thin(self, rng):
        G = random_network(rng, 3, 4)
        Y = random_symptoms(rng, 3, 4, 1)
        res = run_gibbs(Y, G, config=GibbsConfig(iterations=20, thin=3), rng=0)
        assert len(res.param_draws) == 10 and len(res.X_draws) == 3

    def test_missing_cells_imputed(self, rng):
        G = random_network(rng, 4, 5)
        Y = random_symptoms(rng, 4, 5, 2, 0.5)
        res = run_gibbs(Y, G, config=GibbsConfig(iterations=10), rng=0)
        obs = Y != MISSING
        np.testing.assert_array_equal(res.posterior_y[obs], Y[obs])
        assert np.all((res.posterior_y >= 0) & (res.posterior_y <= 1))

    def test_heterogeneous_transmit(self, rng):
        G = random_network(rng, 4, 5)
        Y = random_symptoms(rng, 4, 5, 2)
        res = run_gibbs(Y, G, config=GibbsConfig(iterations=10, homogeneous=False, interp=TRANSMIT), rng=0)
        assert not np.all(res.posterior_params.alpha == res.posterior_params.alpha[0])

    @pytest.mark.parametrize("kw", [dict(iterations=1), dict(iterations=10, burnin=10), dict(thin=0),
                                    dict(interp="sideways")])
    def test_config_validation(self, kw):
        with pytest.raises(DomainError):
            GibbsConfig(**kw)

    def test_first_sweep_uses_initial_params(self):
        p = hom(2, 1, .3, .2, .2, .3, [[0.0], [1.0]])
        s = GibbsSampler(np.ones((2, 1, 1), dtype=np.int8), DynamicNetwork.empty(2, 1),
                         GibbsConfig(iterations=2, init_params=p), rng=0)
        s.sweep()
        assert s.params is not None and np.all(s.X[:, 1] == 1)
