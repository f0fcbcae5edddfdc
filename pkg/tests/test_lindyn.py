"""Solver tests: hand-derived eigenvalues, closed forms, cross-oracle checks."""

import numpy as np
import pytest

from responet import lindyn
from responet.signalgen import Signal


def sdof(omega=2 * np.pi, xi=0.05, mass=1.0):
    k = mass * omega**2
    c = 2.0 * xi * omega * mass
    return lindyn.MdofSystem(
        mass=np.array([[mass]]),
        damping=np.array([[c]]),
        stiffness=np.array([[k]]),
        influence=np.array([1.0]),
    )


def chain6(f1=0.35, xi=0.05):
    k = (np.pi * f1 / np.sin(np.pi / 26)) ** 2
    return lindyn.shear_chain(6, 1.0, k, ratios=xi)


def step_response_closed_form(t, omega, xi):
    # unit constant ground acceleration, zero initial conditions
    wd = omega * np.sqrt(1 - xi**2)
    return -(1.0 / omega**2) * (
        1.0 - np.exp(-xi * omega * t) * (np.cos(wd * t) + xi * omega / wd * np.sin(wd * t))
    )


# ---------------------------------------------------------------------------
# modal_decompose


def test_sdof_mode():
    modes = lindyn.modal_decompose(sdof(), np.array([0.05]))
    assert modes.omega[0] == pytest.approx(2 * np.pi, rel=1e-12)
    assert modes.omega_d[0] == pytest.approx(2 * np.pi * np.sqrt(1 - 0.0025), rel=1e-12)
    assert modes.gamma[0] * modes.phi[0, 0] == pytest.approx(1.0, rel=1e-12)


def test_two_dof_characteristic_polynomial():
    # M = I, K = [[2,-1],[-1,1]]: det(K - w^2 I) = w^4 - 3 w^2 + 1 = 0
    system = lindyn.MdofSystem(
        mass=np.eye(2),
        damping=np.zeros((2, 2)),
        stiffness=np.array([[2.0, -1.0], [-1.0, 1.0]]),
        influence=np.ones(2),
    )
    modes = lindyn.modal_decompose(system, np.zeros(2))
    expected = np.sqrt([(3 - np.sqrt(5)) / 2, (3 + np.sqrt(5)) / 2])
    np.testing.assert_allclose(modes.omega, expected, rtol=1e-12)


def test_chain6_analytic_frequencies():
    # uniform fixed-free chain: omega_j = 2 sqrt(k/m) sin((2j-1) pi / (2(2n+1)))
    k = (np.pi * 0.35 / np.sin(np.pi / 26)) ** 2
    system = lindyn.shear_chain(6, 1.0, k, ratios=0.05)
    modes = lindyn.modal_decompose(system, np.full(6, 0.05))
    j = np.arange(1, 7)
    expected = 2.0 * np.sqrt(k) * np.sin((2 * j - 1) * np.pi / 26)
    np.testing.assert_allclose(modes.omega, expected, rtol=1e-10)
    assert np.all(np.diff(modes.omega) > 0)


def test_mass_orthogonality_of_modes():
    system = chain6()
    modes = lindyn.modal_decompose(system, np.full(6, 0.05))
    gram = modes.phi @ system.mass @ modes.phi.T
    off = gram - np.diag(np.diag(gram))
    assert np.abs(off).max() <= 1e-8 * np.abs(np.diag(gram)).max()


def test_invalid_systems_rejected():
    with pytest.raises(lindyn.InvalidSystemError, match="invalid system"):
        lindyn.MdofSystem(
            mass=np.array([[1.0, 0.5], [0.0, 1.0]]),   # not symmetric
            damping=np.zeros((2, 2)),
            stiffness=np.eye(2),
            influence=np.ones(2),
        )
    with pytest.raises(lindyn.InvalidSystemError, match="invalid system"):
        lindyn.MdofSystem(
            mass=np.diag([1.0, -1.0]),                 # indefinite
            damping=np.zeros((2, 2)),
            stiffness=np.eye(2),
            influence=np.ones(2),
        )


def test_repeated_frequencies_rejected():
    system = lindyn.MdofSystem(
        mass=np.eye(2), damping=np.zeros((2, 2)), stiffness=np.eye(2), influence=np.ones(2)
    )
    with pytest.raises(lindyn.InvalidSystemError, match="repeated"):
        lindyn.modal_decompose(system, np.zeros(2))


def test_bad_damping_ratio_rejected():
    with pytest.raises(ValueError):
        lindyn.modal_decompose(sdof(), np.array([1.0]))


# ---------------------------------------------------------------------------
# impulse_response


def test_impulse_starts_at_zero():
    modes = lindyn.modal_decompose(chain6(), np.full(6, 0.05))
    h = lindyn.impulse_response(modes, 0, 0.02, 64)
    assert h[0] == 0.0


def test_impulse_undamped_quarter_period():
    modes = lindyn.modal_decompose(sdof(xi=0.0), np.array([0.0]))
    h = lindyn.impulse_response(modes, 0, 0.25, 2)
    # t = 0.25: -(1/2pi) sin(pi/2)
    assert h[1] == pytest.approx(-1.0 / (2 * np.pi), rel=1e-14)


def test_impulse_damped_frozen_value():
    # independent high-precision evaluation (mpmath, 40 digits)
    modes = lindyn.modal_decompose(sdof(), np.array([0.05]))
    h = lindyn.impulse_response(modes, 0, 1.0, 2)
    assert h[1] == pytest.approx(0.00091470940353613892, rel=1e-13)


# ---------------------------------------------------------------------------
# duhamel_response


def test_duhamel_zero_signal():
    modes = lindyn.modal_decompose(chain6(), np.full(6, 0.05))
    out = lindyn.duhamel_response(modes, 0, Signal(dt=0.02, samples=np.zeros(100)))
    assert np.all(out.samples == 0.0)


def test_duhamel_step_response_closed_form():
    dt = 0.005
    m = 2001  # 10 s
    modes = lindyn.modal_decompose(sdof(), np.array([0.05]))
    out = lindyn.duhamel_response(modes, 0, Signal(dt=dt, samples=np.ones(m)))
    exact = step_response_closed_form(np.arange(m) * dt, 2 * np.pi, 0.05)
    assert np.abs(out.samples - exact).max() <= 1e-4 * np.abs(exact).max()


def test_duhamel_step_settles_to_static_value():
    # transient decays like exp(-xi omega t); by 30 s it is below 1e-4
    dt = 0.005
    m = 6001
    modes = lindyn.modal_decompose(sdof(), np.array([0.05]))
    out = lindyn.duhamel_response(modes, 0, Signal(dt=dt, samples=np.ones(m)))
    assert out.samples[-1] == pytest.approx(-1.0 / (4 * np.pi**2), abs=1e-4)


def test_duhamel_discrete_delta_reproduces_kernel():
    # unit-area impulse under the trapezoidal rule: height 2/dt at j=0
    dt = 0.01
    m = 400
    modes = lindyn.modal_decompose(chain6(), np.full(6, 0.05))
    u = np.zeros(m)
    u[0] = 2.0 / dt
    out = lindyn.duhamel_response(modes, 0, Signal(dt=dt, samples=u))
    h = lindyn.impulse_response(modes, 0, dt, m)
    np.testing.assert_allclose(out.samples, h, rtol=0, atol=1e-12)


# ---------------------------------------------------------------------------
# newmark_response


def test_newmark_zero_signal():
    out = lindyn.newmark_response(chain6(), Signal(dt=0.02, samples=np.zeros(50)))
    assert np.all(out == 0.0)


def test_newmark_step_response_closed_form():
    dt = 0.005
    m = 2001
    out = lindyn.newmark_response(sdof(), Signal(dt=dt, samples=np.ones(m)))
    exact = step_response_closed_form(np.arange(m) * dt, 2 * np.pi, 0.05)
    rel = np.linalg.norm(out[0] - exact) / np.linalg.norm(exact)
    assert rel <= 1e-3


def test_newmark_matches_duhamel_on_chain():
    from responet.signalgen import synth_ground_motion

    system = chain6()
    modes = lindyn.modal_decompose(system, np.full(6, 0.05))
    rels = []
    for seed in range(3):
        sig = synth_ground_motion(seed, 10.0, 0.02, (0.3, 4.0), 0.4)
        xd = lindyn.duhamel_response(modes, 0, sig).samples
        xn = lindyn.newmark_response(system, sig)[0]
        rels.append(np.linalg.norm(xd - xn) / np.linalg.norm(xn))
    assert np.mean(rels) <= 5e-3


def test_solver_convergence_under_refinement():
    # same continuous (piecewise linear) input on nested grids
    from responet.signalgen import synth_ground_motion

    system = chain6()
    modes = lindyn.modal_decompose(system, np.full(6, 0.05))
    fine = synth_ground_motion(11, 10.0, 0.005, (0.3, 4.0), 0.4)
    errs = {}
    for step in (4, 2):
        dt = 0.005 * step
        sig = Signal(dt=dt, samples=fine.samples[::step])
        xd = lindyn.duhamel_response(modes, 0, sig).samples
        xn = lindyn.newmark_response(system, sig)[0]
        errs[dt] = np.linalg.norm(xd - xn) / np.linalg.norm(xn)
    assert errs[0.02] / errs[0.01] >= 3.5


# ---------------------------------------------------------------------------
# state_eigen / nonclassical_response


def test_state_eigen_sdof_roots():
    omega, xi = 2 * np.pi, 0.05
    modes = lindyn.state_eigen(sdof(omega, xi))
    assert modes.omega[0] == pytest.approx(omega, rel=1e-12)
    assert modes.xi[0] == pytest.approx(xi, rel=1e-12)
    assert modes.lam[0].imag == pytest.approx(omega * np.sqrt(1 - xi**2), rel=1e-12)


def test_state_eigen_rayleigh_consistency():
    # Rayleigh damping is classical: complex-mode frequencies/ratios must
    # reproduce the modal ones
    M = np.eye(2)
    K = np.array([[2.0, -1.0], [-1.0, 1.0]])
    a, b = 0.05, 0.01
    C = lindyn.rayleigh_damping(M, K, a, b)
    system = lindyn.MdofSystem(mass=M, damping=C, stiffness=K, influence=np.ones(2))
    w2 = np.array([(3 - np.sqrt(5)) / 2, (3 + np.sqrt(5)) / 2])
    xi_expected = lindyn.rayleigh_ratios(np.sqrt(w2), a, b)
    modes = lindyn.state_eigen(system)
    np.testing.assert_allclose(modes.omega, np.sqrt(w2), rtol=1e-8)
    np.testing.assert_allclose(modes.xi, xi_expected, rtol=1e-8)


def test_state_eigen_residual_nonclassical():
    M = np.eye(2)
    K = np.array([[2.0, -1.0], [-1.0, 1.0]])
    C = np.array([[0.4, 0.0], [0.0, 0.02]])  # deliberately non-proportional
    system = lindyn.MdofSystem(mass=M, damping=C, stiffness=K, influence=np.ones(2))
    modes = lindyn.state_eigen(system)
    state = np.zeros((4, 4))
    state[:2, 2:] = np.eye(2)
    state[2:, :2] = -np.linalg.solve(M, K)
    state[2:, 2:] = -np.linalg.solve(M, C)
    for lam, psi in zip(modes.lam, modes.psi):
        z = np.concatenate([psi, lam * psi])
        assert np.linalg.norm(state @ z - lam * z) <= 1e-8 * np.linalg.norm(z)


def test_state_eigen_rejects_overdamped():
    with pytest.raises(lindyn.InvalidSystemError):
        lindyn.state_eigen(sdof(omega=1.0, xi=0.0, mass=1.0).__class__(
            mass=np.array([[1.0]]),
            damping=np.array([[5.0]]),  # far beyond critical for k = 1
            stiffness=np.array([[1.0]]),
            influence=np.array([1.0]),
        ))


def test_nonclassical_zero_signal():
    modes = lindyn.state_eigen(chain6())
    out = lindyn.nonclassical_response(modes, 0, Signal(dt=0.02, samples=np.zeros(60)))
    assert np.all(out.samples == 0.0)


def test_nonclassical_matches_duhamel_for_classical_damping():
    from responet.signalgen import synth_ground_motion

    system = chain6()
    cmodes = lindyn.modal_decompose(system, np.full(6, 0.05))
    nmodes = lindyn.state_eigen(system)
    sig = synth_ground_motion(5, 10.0, 0.02, (0.3, 4.0), 0.4)
    xd = lindyn.duhamel_response(cmodes, 0, sig).samples
    xn = lindyn.nonclassical_response(nmodes, 0, sig).samples
    assert np.linalg.norm(xd - xn) / np.linalg.norm(xd) <= 1e-6


def test_complex_kernel_derivative_vs_finite_differences():
    modes = lindyn.state_eigen(chain6())
    dt = 1e-4
    m = 20000
    h, hdot = lindyn._complex_mode_kernels(modes, 0, dt, m)
    fd = (h[2:] - h[:-2]) / (2 * dt)
    scale = np.abs(hdot[1:-1]).max()
    assert np.abs(hdot[1:-1] - fd).max() <= 1e-6 * scale


# ---------------------------------------------------------------------------
# shared solver properties


@pytest.mark.parametrize("solver", ["duhamel", "newmark", "nonclassical"])
def test_linearity(solver):
    from responet.signalgen import synth_ground_motion

    system = chain6()
    rng = np.random.default_rng(3)
    u = synth_ground_motion(1, 4.0, 0.02, (0.5, 8.0), 0.4)
    v = synth_ground_motion(2, 4.0, 0.02, (0.5, 8.0), 0.3)
    a, b = 1.7, -0.6

    if solver == "duhamel":
        modes = lindyn.modal_decompose(system, np.full(6, 0.05))
        f = lambda s: lindyn.duhamel_response(modes, 0, s).samples
    elif solver == "nonclassical":
        modes = lindyn.state_eigen(system)
        f = lambda s: lindyn.nonclassical_response(modes, 0, s).samples
    else:
        f = lambda s: lindyn.newmark_response(system, s)[0]

    combo = Signal(dt=u.dt, samples=a * u.samples + b * v.samples)
    lhs = f(combo)
    rhs = a * f(u) + b * f(v)
    assert np.abs(lhs - rhs).max() <= 1e-10 * max(np.abs(rhs).max(), 1e-30)


@pytest.mark.parametrize("solver", ["duhamel", "newmark"])
def test_causality_prefix_bit_exact(solver):
    # two inputs agreeing on [0, t] produce bit-identical outputs on [0, t]
    system = chain6()
    modes = lindyn.modal_decompose(system, np.full(6, 0.05))
    rng = np.random.default_rng(9)
    m, cut = 300, 140
    base = rng.standard_normal(m)
    other = base.copy()
    other[cut:] = rng.standard_normal(m - cut) * 3.0

    def solve(samples):
        sig = Signal(dt=0.02, samples=samples)
        if solver == "duhamel":
            return lindyn.duhamel_response(modes, 0, sig).samples
        return lindyn.newmark_response(system, sig)[0]

    x1, x2 = solve(base), solve(other)
    assert np.array_equal(x1[:cut], x2[:cut])
    assert not np.array_equal(x1[cut:], x2[cut:])


def test_newmark_cross_solver_causality():
    # the two solvers also agree with themselves about where the prefix ends
    system = chain6()
    modes = lindyn.modal_decompose(system, np.full(6, 0.05))
    rng = np.random.default_rng(10)
    u = rng.standard_normal(200)
    v = u.copy()
    v[150:] += 1.0
    su, sv = Signal(dt=0.02, samples=u), Signal(dt=0.02, samples=v)
    assert np.array_equal(
        lindyn.duhamel_response(modes, 0, su).samples[:150],
        lindyn.duhamel_response(modes, 0, sv).samples[:150],
    )
    assert np.array_equal(
        lindyn.newmark_response(system, su)[0][:150],
        lindyn.newmark_response(system, sv)[0][:150],
    )


# ---------------------------------------------------------------------------
# system definition files


def test_system_file_round_trip(tmp_path):
    system = chain6()
    spec = lindyn.SystemSpec(system=system, damping_kind="modal_xi", modal_xi=np.full(6, 0.05))
    path = tmp_path / "chain.sys"
    lindyn.save_system(spec, path)
    loaded = lindyn.load_system(path)
    np.testing.assert_array_equal(loaded.system.mass, system.mass)
    np.testing.assert_array_equal(loaded.system.stiffness, system.stiffness)
    np.testing.assert_array_equal(loaded.modal_xi, np.full(6, 0.05))
    np.testing.assert_allclose(loaded.system.damping, system.damping, rtol=1e-12)


def test_system_file_rayleigh(tmp_path):
    system = lindyn.MdofSystem(
        mass=np.eye(2),
        damping=lindyn.rayleigh_damping(np.eye(2), np.array([[2.0, -1.0], [-1.0, 1.0]]), 0.1, 0.02),
        stiffness=np.array([[2.0, -1.0], [-1.0, 1.0]]),
        influence=np.ones(2),
    )
    spec = lindyn.SystemSpec(system=system, damping_kind="rayleigh", modal_xi=None, rayleigh=(0.1, 0.02))
    path = tmp_path / "r.sys"
    lindyn.save_system(spec, path)
    loaded = lindyn.load_system(path)
    assert loaded.damping_kind == "rayleigh"
    assert loaded.modal_xi is not None  # derivable for the analytic solver
    np.testing.assert_allclose(loaded.system.damping, system.damping, rtol=1e-12)


def test_system_file_errors(tmp_path):
    path = tmp_path / "bad.sys"
    path.write_text("n 2\nmass\n1 0\n0 1\n")
    with pytest.raises(ValueError):
        lindyn.load_system(path)
    path.write_text("mass\n1\n")
    with pytest.raises(ValueError):
        lindyn.load_system(path)
