import json

import numpy as np
import pytest

from bestlds.errors import ConfigError, ParameterError, StabilityError
from bestlds.model import (
    PRESETS,
    InputSpec,
    SystemParams,
    TimeSeries,
    concatenate_timeseries,
    longrun_latent_cov,
    make_preset,
    simulate,
    simulate_noiseless,
    simulate_trials,
    stationary_latent_cov,
)


def lyapunov_kron(a, q):
    # Independent route to P = A P A' + Q: vectorize and solve the linear system
    # (I - A (x) A) vec(P) = vec(Q).
    p = a.shape[0]
    lhs = np.eye(p * p) - np.kron(a, a)
    return np.linalg.solve(lhs, q.reshape(-1)).reshape(p, p)


def tiny_params(p=2, q=3, m=2, seed=0):
    rng = np.random.default_rng(seed)
    a = 0.5 * np.diag(rng.uniform(0.2, 0.9, p))
    return SystemParams(
        A=a,
        B=0.3 * rng.standard_normal((p, m)),
        C=rng.standard_normal((q, p)),
        D=0.2 * rng.standard_normal((q, m)),
        Q=0.1 * np.eye(p),
        mu0=np.zeros(p),
        Q0=np.eye(p),
    )


class TestStationaryCov:
    def test_memoryless_returns_q(self):
        q = np.diag([0.3, 0.7])
        p = stationary_latent_cov(np.zeros((2, 2)), q)
        assert np.allclose(p, q, atol=1e-12)

    def test_scalar_recursion_hand_value(self):
        # A = 0.5 I, Q = I gives P = 1 / (1 - 0.25) = 4/3 per coordinate.
        p = stationary_latent_cov(0.5 * np.eye(2), np.eye(2))
        assert np.allclose(p, (4.0 / 3.0) * np.eye(2), atol=1e-12)

    def test_fixed_point_residual(self):
        rng = np.random.default_rng(11)
        a = 0.9 * np.linalg.qr(rng.standard_normal((4, 4)))[0]
        q = np.eye(4) + 0.1 * np.ones((4, 4))
        p = stationary_latent_cov(a, q)
        assert np.linalg.norm(p - a @ p @ a.T - q) < 1e-10
        assert np.allclose(p, lyapunov_kron(a, q), atol=1e-9)

    def test_rotation_rejected(self):
        rot = np.array([[0.0, -1.0], [1.0, 0.0]])
        with pytest.raises(StabilityError):
            stationary_latent_cov(rot, np.eye(2))

    def test_longrun_matches_geometric_series(self):
        a = np.array([[0.5]])
        q = np.array([[1.0]])
        # sum_{j<H} 0.25^j, H = 1000
        expected = (1 - 0.25**1000) / (1 - 0.25)
        assert np.allclose(longrun_latent_cov(a, q), expected, atol=1e-12)

    def test_longrun_rotation_grows_linearly(self):
        rot = np.array([[0.0, -1.0], [1.0, 0.0]])
        cov = longrun_latent_cov(rot, 0.01 * np.eye(2), horizon=500)
        assert np.allclose(cov, 0.01 * 500 * np.eye(2), atol=1e-10)


# Dimensions transcribed independently from the preset definitions: (q, p, m).
PRESET_DIMS = {
    "A": (1, 3, 3),
    "B": (10, 5, 3),
    "C": (8, 6, 4),
    "D": (5, 2, 3),
    "E": (5, 2, 3),
    "F": (10, 5, 3),
    "G": (1, 2, 3),
}


class TestMakePreset:
    @pytest.mark.parametrize("name", sorted(PRESET_DIMS))
    def test_dimensions(self, name):
        with pytest.warns() if name in "DEG" else _nullcontext():
            params, spec = make_preset(name, seed=0)
        q, p, m = PRESET_DIMS[name]
        assert (params.q, params.p, params.m) == (q, p, m)
        assert isinstance(spec, InputSpec)

    def test_eigenvalue_range(self):
        params, _ = make_preset("B", seed=5)
        mags = np.abs(np.linalg.eigvals(params.A))
        assert np.all(mags >= 0.9 - 1e-8) and np.all(mags <= 0.99 + 1e-8)
        params, _ = make_preset("C", seed=5)
        mags = np.abs(np.linalg.eigvals(params.A))
        assert np.all(mags >= 0.5 - 1e-8) and np.all(mags <= 0.9 + 1e-8)

    def test_rotation_angles(self):
        with pytest.warns(RuntimeWarning):
            params, _ = make_preset("E", seed=1)
        assert np.allclose(params.A, [[0.0, -1.0], [1.0, 0.0]], atol=1e-12)
        with pytest.warns(RuntimeWarning):
            params, _ = make_preset("G", seed=1)
        th = np.pi / 400
        rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        assert np.allclose(params.A, rot, atol=1e-12)

    def test_noise_scales(self):
        params, _ = make_preset("B", seed=2)
        assert np.allclose(params.Q, 0.1 * np.eye(5), atol=1e-15)
        with pytest.warns(RuntimeWarning):
            params, _ = make_preset("D", seed=2)
        assert np.allclose(params.Q, 1e-4 * np.eye(2), atol=1e-18)

    def test_input_specs(self):
        _, spec = make_preset("F", seed=0)
        assert spec.kind == "student_t" and spec.dof == 3.0
        # t(3) has variance dof/(dof-2) = 3
        assert np.allclose(spec.covariance(3), 3.0 * np.eye(3))
        with pytest.warns(RuntimeWarning):
            _, spec = make_preset("D", seed=0)
        assert spec.kind == "gaussian" and spec.variance == 1e-4

    def test_orthonormal_frames(self):
        # Row B: inputs map is a 5x3 frame with orthonormal columns, scale 0.1.
        params, _ = make_preset("B", seed=7)
        gram = params.B.T @ params.B
        assert np.allclose(gram, 0.01 * np.eye(3), atol=1e-12)
        # C for preset C (8x6, tall) has orthonormal columns before the
        # unit-diagonal rescale, so the small Gram is the scaled identity.
        params, _ = make_preset("C", seed=7, unit_diag_z=False)
        gram = params.C.T @ params.C
        assert np.allclose(gram, 100.0 * np.eye(6), atol=1e-10)

    @pytest.mark.parametrize("name", ["A", "B", "C", "F"])
    def test_unit_diagonal_latent_signal(self, name):
        params, _ = make_preset(name, seed=3)
        pcov = stationary_latent_cov(params.A, params.Q)
        diag = np.diag(params.C @ pcov @ params.C.T)
        assert np.allclose(diag, 1.0, atol=1e-8)

    def test_unit_diag_override(self):
        on, _ = make_preset("B", seed=4)
        off, _ = make_preset("B", seed=4, unit_diag_z=False)
        assert np.allclose(off.C.T @ off.C, 0.01 * np.eye(5), atol=1e-12)
        assert not np.allclose(on.C, off.C)
        # Everything except C is shared.
        assert np.array_equal(on.A, off.A) and np.array_equal(on.B, off.B)

    def test_initial_state_covariance_is_driven_stationary(self):
        params, spec = make_preset("B", seed=9)
        q_eff = params.Q + params.B @ spec.covariance(params.m) @ params.B.T
        resid = params.Q0 - params.A @ params.Q0 @ params.A.T - q_eff
        assert np.linalg.norm(resid) < 1e-8

    def test_deterministic_and_seed_sensitive(self):
        p1, _ = make_preset("B", seed=42)
        p2, _ = make_preset("B", seed=42)
        p3, _ = make_preset("B", seed=43)
        for name in ("A", "B", "C", "D"):
            assert np.array_equal(getattr(p1, name), getattr(p2, name))
        assert not np.array_equal(p1.A, p3.A)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            make_preset("Z", seed=0)


class _nullcontext:
    def __enter__(self):
        return None

    def __exit__(self, *exc):
        return False


class TestSimulate:
    def test_shapes_and_binary(self):
        params = tiny_params()
        ts = simulate(params, InputSpec(), n_steps=200, seed=0)
        assert ts.u.shape == (200, 2)
        assert ts.y.shape == (200, 3)
        assert ts.x.shape == (200, 2)
        assert ts.z.shape == (200, 3)
        assert set(np.unique(ts.y)) <= {0, 1}

    def test_deterministic(self):
        params = tiny_params()
        a = simulate(params, InputSpec(), n_steps=100, seed=123)
        b = simulate(params, InputSpec(), n_steps=100, seed=123)
        assert np.array_equal(a.u, b.u)
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.y, b.y)
        c = simulate(params, InputSpec(), n_steps=100, seed=124)
        assert not np.array_equal(a.y, c.y)

    def test_zero_readout_gives_fair_coins(self):
        # C = 0 and D = 0 force z = 0, so each y channel is Bernoulli(1/2).
        p, q, m, n = 2, 2, 1, 40000
        params = SystemParams(
            A=0.5 * np.eye(p), B=np.zeros((p, m)), C=np.zeros((q, p)),
            D=np.zeros((q, m)), Q=0.1 * np.eye(p), mu0=np.zeros(p), Q0=np.eye(p),
        )
        ts = simulate(params, InputSpec(), n_steps=n, seed=8)
        margin = 3 * np.sqrt(0.25 / n)
        assert np.all(np.abs(ts.y.mean(axis=0) - 0.5) < margin)

    def test_lag1_signal_covariance_matches_analytic(self):
        params, spec = make_preset("B", seed=14)
        n = 150000
        ts = simulate(params, spec, n_steps=n, seed=15)
        # Analytic lag-1 covariance of z under the stationary driven process:
        # cov(z_{t+1}, z_t) = C A P C' + C B S_u D', with P from the Kronecker
        # route so the oracle shares nothing with the implementation.
        s_u = spec.covariance(params.m)
        q_eff = params.Q + params.B @ s_u @ params.B.T
        pfull = lyapunov_kron(params.A, q_eff)
        expected = (
            params.C @ params.A @ pfull @ params.C.T
            + params.C @ params.B @ s_u @ params.D.T
        )
        zc = ts.z - ts.z.mean(axis=0)
        emp = zc[1:].T @ zc[:-1] / (n - 1)
        assert np.max(np.abs(emp - expected)) < 0.05

    def test_explicit_input_array(self):
        params = tiny_params()
        u = np.random.default_rng(3).standard_normal((50, 2))
        ts = simulate(params, u, seed=1)
        assert np.array_equal(ts.u, u)
        with pytest.raises(ConfigError):
            simulate(params, u, n_steps=49, seed=1)
        with pytest.raises(ConfigError):
            simulate(params, np.zeros((10, 5)), seed=1)

    def test_marginally_stable_warns(self):
        with pytest.warns(RuntimeWarning):
            params, spec = make_preset("E", seed=0)
        with pytest.warns(RuntimeWarning):
            simulate(params, spec, n_steps=50, seed=0)

    def test_unstable_rejected(self):
        params = tiny_params()
        params.A = 1.2 * np.eye(2)
        with pytest.raises(StabilityError):
            simulate(params, InputSpec(), n_steps=10, seed=0)

    def test_multi_trial(self):
        params = tiny_params()
        ts = simulate_trials(params, InputSpec(), n_steps=30, n_trials=4, seed=2)
        assert ts.n == 120
        assert ts.trial_starts == (0, 30, 60, 90)
        assert ts.segments() == [(0, 30), (30, 60), (60, 90), (90, 120)]

    def test_no_input_channel(self):
        p, q = 2, 2
        params = SystemParams(
            A=0.5 * np.eye(p), B=np.zeros((p, 0)),
            C=np.eye(q), D=np.zeros((q, 0)),
            Q=0.1 * np.eye(p), mu0=np.zeros(p), Q0=np.eye(p),
        )
        ts = simulate(params, np.zeros((40, 0)), seed=0)
        assert ts.u.shape == (40, 0)
        assert ts.y.shape == (40, 2)


class TestSimulateNoiseless:
    def test_zero_input_stays_at_origin(self):
        params = tiny_params()
        ts = simulate_noiseless(params, np.zeros((20, 2)))
        assert np.allclose(ts.z, 0.0)
        assert np.all(ts.y == 1)  # threshold convention: z = 0 maps to 1

    def test_memoryless_dynamics_expansion(self):
        # With A = 0 the signal reduces to z_t = C B u_{t-1} + D u_t.
        rng = np.random.default_rng(21)
        p, q, m = 3, 2, 2
        params = SystemParams(
            A=np.zeros((p, p)), B=rng.standard_normal((p, m)),
            C=rng.standard_normal((q, p)), D=rng.standard_normal((q, m)),
            Q=np.eye(p), mu0=np.zeros(p), Q0=np.eye(p),
        )
        u = rng.standard_normal((30, m))
        ts = simulate_noiseless(params, u)
        expected = u @ params.D.T
        expected[1:] += u[:-1] @ (params.C @ params.B).T
        assert np.allclose(ts.z, expected, atol=1e-12)

    def test_impulse_gives_markov_parameters(self):
        # Unit pulse on input channel j at t=0 yields D e_j, CB e_j, CAB e_j, ...
        params = tiny_params(p=3, q=2, m=2, seed=4)
        u = np.zeros((6, 2))
        u[0, 1] = 1.0
        ts = simulate_noiseless(params, u)
        a, b, c, d = params.A, params.B, params.C, params.D
        expected = [d[:, 1]]
        apow = np.eye(3)
        for _ in range(5):
            expected.append(c @ apow @ b[:, 1])
            apow = a @ apow
        assert np.allclose(ts.z, np.stack(expected), atol=1e-12)


class TestTimeSeries:
    def test_rejects_nonbinary(self):
        with pytest.raises(ConfigError):
            TimeSeries(u=np.zeros((5, 1)), y=np.full((5, 1), 2))

    def test_rejects_bad_trial_starts(self):
        u, y = np.zeros((6, 1)), np.zeros((6, 1), dtype=int)
        for starts in [(1,), (0, 0), (0, 6), (0, 3, 2)]:
            with pytest.raises(ConfigError):
                TimeSeries(u=u, y=y, trial_starts=starts)

    def test_one_dimensional_inputs_become_columns(self):
        ts = TimeSeries(u=np.zeros(5), y=np.ones(5, dtype=int))
        assert ts.u.shape == (5, 1) and ts.y.shape == (5, 1)

    def test_csv_round_trip(self, tmp_path):
        params = tiny_params()
        ts = simulate_trials(params, InputSpec(), n_steps=25, n_trials=3, seed=6)
        path = tmp_path / "data.csv"
        ts.to_csv(path)
        back = TimeSeries.from_csv(path)
        assert np.array_equal(back.u, ts.u)
        assert np.array_equal(back.y, ts.y)
        assert back.trial_starts == ts.trial_starts
        # A second write is byte-identical.
        path2 = tmp_path / "data2.csv"
        ts.to_csv(path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_csv_single_trial_has_no_trial_column(self, tmp_path):
        ts = simulate(tiny_params(), InputSpec(), n_steps=10, seed=0)
        path = tmp_path / "one.csv"
        ts.to_csv(path)
        header = path.read_text().splitlines()[0]
        assert "trial_id" not in header
        back = TimeSeries.from_csv(path)
        assert back.trial_starts == (0,)

    def test_concatenate(self):
        params = tiny_params()
        a = simulate(params, InputSpec(), n_steps=10, seed=1)
        b = simulate(params, InputSpec(), n_steps=15, seed=2)
        both = concatenate_timeseries([a, b])
        assert both.trial_starts == (0, 10)
        assert np.array_equal(both.y[:10], a.y)
        assert np.array_equal(both.y[10:], b.y)


class TestSystemParams:
    def test_json_round_trip(self, tmp_path):
        params = tiny_params()
        path = tmp_path / "params.json"
        params.save(path)
        back = SystemParams.load(path)
        for name in ("A", "B", "C", "D", "Q", "mu0", "Q0"):
            assert np.array_equal(getattr(back, name), getattr(params, name))
        # Saved form is valid JSON with explicit dimensions.
        blob = json.loads(path.read_text())
        assert (blob["p"], blob["q"], blob["m"]) == (2, 3, 2)

    def test_rejects_bad_shapes(self):
        with pytest.raises(ParameterError):
            SystemParams(
                A=np.zeros((2, 3)), B=np.zeros((2, 1)), C=np.zeros((1, 2)),
                D=np.zeros((1, 1)), Q=np.eye(2), mu0=np.zeros(2), Q0=np.eye(2),
            )
        with pytest.raises(ParameterError):
            SystemParams(
                A=np.eye(2) * 0.5, B=np.zeros((2, 1)), C=np.zeros((1, 3)),
                D=np.zeros((1, 1)), Q=np.eye(2), mu0=np.zeros(2), Q0=np.eye(2),
            )

    def test_rejects_indefinite_noise(self):
        with pytest.raises(ParameterError):
            SystemParams(
                A=0.5 * np.eye(2), B=np.zeros((2, 1)), C=np.zeros((1, 2)),
                D=np.zeros((1, 1)), Q=np.diag([1.0, -0.5]),
                mu0=np.zeros(2), Q0=np.eye(2),
            )
        with pytest.raises(ParameterError):
            SystemParams(
                A=0.5 * np.eye(2), B=np.zeros((2, 1)), C=np.zeros((1, 2)),
                D=np.zeros((1, 1)), Q=np.array([[1.0, 0.5], [0.1, 1.0]]),
                mu0=np.zeros(2), Q0=np.eye(2),
            )
