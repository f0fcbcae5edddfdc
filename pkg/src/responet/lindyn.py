"""Exact causal responses of linear multi-degree-of-freedom systems.

Solvers for the base-excited equation of motion

    M x'' + C x' + K x = -M i a(t),    x(0) = x'(0) = 0,

where ``a(t)`` is a uniformly sampled ground acceleration and ``i`` the
influence vector.  Three independent routes are provided:

* modal superposition of damped sinusoids convolved against the input
  (``modal_decompose`` / ``impulse_response`` / ``duhamel_response``),
* complex state-space eigenpairs for non-classically damped systems
  (``state_eigen`` / ``nonclassical_response``),
* implicit Newmark time stepping (``newmark_response``), used as the
  cross-check oracle for the analytic routes.

All convolutions use the trapezoidal rule on the shared sample grid, so
both analytic solvers are second-order accurate, matching Newmark with
the average-acceleration parameters.  Every function here is pure and
safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg


class InvalidSystemError(ValueError):
    """Structural matrices violate symmetry/definiteness requirements."""


class EigenFailureError(RuntimeError):
    """Eigenvalue iteration failed to converge or verify."""


class NumericalError(RuntimeError):
    """A linear solve inside a time stepper broke down."""


_SYM_TOL = 1e-12
_EIG_RESIDUAL_TOL = 1e-9
_STATE_RESIDUAL_TOL = 1e-8


def _check_symmetric(a, name):
    scale = max(1.0, np.abs(a).max())
    if np.abs(a - a.T).max() > _SYM_TOL * scale:
        raise InvalidSystemError(f"invalid system: {name} matrix not symmetric")


@dataclass
class MdofSystem:
    """Mass, damping and stiffness matrices plus the influence vector.

    Units are SI throughout: kg, N·s/m, N/m; the influence vector is
    dimensionless.  Mass and stiffness must be symmetric (1e-12
    relative) and mass positive definite.
    """

    mass: np.ndarray
    damping: np.ndarray
    stiffness: np.ndarray
    influence: np.ndarray

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=float)
        self.damping = np.asarray(self.damping, dtype=float)
        self.stiffness = np.asarray(self.stiffness, dtype=float)
        self.influence = np.asarray(self.influence, dtype=float)
        n = self.mass.shape[0]
        if n < 1 or self.mass.shape != (n, n):
            raise InvalidSystemError("invalid system: mass matrix not square")
        for name in ("mass", "damping", "stiffness"):
            a = getattr(self, name)
            if a.shape != (n, n):
                raise InvalidSystemError(f"invalid system: {name} shape mismatch")
            if not np.all(np.isfinite(a)):
                raise InvalidSystemError(f"invalid system: {name} has non-finite entries")
        if self.influence.shape != (n,):
            raise InvalidSystemError("invalid system: influence vector length mismatch")
        _check_symmetric(self.mass, "mass")
        _check_symmetric(self.stiffness, "stiffness")
        if np.linalg.eigvalsh(self.mass).min() <= 0.0:
            raise InvalidSystemError("invalid system: mass matrix not positive definite")

    @property
    def n(self) -> int:
        return self.mass.shape[0]


@dataclass
class ClassicalModes:
    """Per-mode quantities of a classically damped system.

    ``phi`` holds one mode shape per row (mass-normalised), modes sorted
    by ascending natural frequency; ``gamma`` are the participation
    factors of the base-excitation load.
    """

    omega: np.ndarray
    xi: np.ndarray
    omega_d: np.ndarray
    phi: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        wd = self.omega * np.sqrt(1.0 - self.xi**2)
        if np.abs(wd - self.omega_d).max() > 1e-12 * np.abs(self.omega).max():
            raise InvalidSystemError("damped frequencies inconsistent with ratios")
        if np.any(np.diff(self.omega) <= 0):
            raise InvalidSystemError("modes must be sorted by ascending frequency")

    @property
    def n(self) -> int:
        return len(self.omega)


@dataclass
class NonClassicalModes:
    """Complex-mode quantities of a (possibly) non-classically damped system.

    One representative per conjugate eigenpair is stored.  ``beta`` is
    the modal load scaling, ``alpha``/``gamma`` the real and imaginary
    parts of twice the scaled eigenvector (per mode, per DOF), and
    ``gamma_tilde`` the damped combination multiplying the displacement
    kernel in the superposition formula.
    """

    lam: np.ndarray          # complex eigenvalues, Im > 0 representatives
    psi: np.ndarray          # complex mode shapes, one per row
    omega: np.ndarray        # |lam|
    xi: np.ndarray           # -Re(lam)/|lam|
    omega_d: np.ndarray
    beta: np.ndarray         # complex, per mode
    alpha: np.ndarray        # real, modes x dof
    gamma: np.ndarray        # real, modes x dof
    gamma_tilde: np.ndarray  # real, modes x dof

    def __post_init__(self):
        wd = self.omega * np.sqrt(1.0 - self.xi**2)
        if np.abs(wd - self.omega_d).max() > 1e-10 * np.abs(self.omega).max():
            raise InvalidSystemError("damped frequencies inconsistent with ratios")

    @property
    def n(self) -> int:
        return len(self.lam)


def modal_decompose(system: MdofSystem, damping_ratios) -> ClassicalModes:
    """Solve K phi = omega^2 M phi and attach externally supplied damping.

    Damping ratios are per mode (classical modal damping); each must lie
    in [0, 1).  Mode shapes are mass-normalised with the sign fixed so
    the largest-magnitude entry is positive.  Raises ``EigenFailureError``
    if the eigensolve fails its residual check and ``InvalidSystemError``
    for repeated natural frequencies.
    """
    xi = np.asarray(damping_ratios, dtype=float)
    if xi.shape != (system.n,):
        raise ValueError("need one damping ratio per mode")
    if np.any(xi < 0.0) or np.any(xi >= 1.0):
        raise ValueError("damping ratios must lie in [0, 1)")
    try:
        w2, vecs = scipy.linalg.eigh(system.stiffness, system.mass)
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover - rare
        raise EigenFailureError("eigen failure") from exc
    if w2[0] <= 0.0:
        raise InvalidSystemError("invalid system: stiffness not positive definite")
    omega = np.sqrt(w2)
    if np.any(np.diff(omega) <= 1e-8 * omega[1:]):
        raise InvalidSystemError("invalid system: repeated natural frequencies")
    # residual check: the solver is a substitute and must prove itself
    res = system.stiffness @ vecs - system.mass @ vecs * w2
    denom = np.linalg.norm(system.stiffness @ vecs, axis=0)
    if np.any(np.linalg.norm(res, axis=0) > _EIG_RESIDUAL_TOL * denom):
        raise EigenFailureError("eigen failure")
    phi = vecs.T.copy()
    for row in phi:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    mphi = phi @ system.mass
    gamma = (mphi @ system.influence) / np.einsum("ij,ij->i", mphi, phi)
    return ClassicalModes(
        omega=omega,
        xi=xi,
        omega_d=omega * np.sqrt(1.0 - xi**2),
        phi=phi,
        gamma=gamma,
    )


def impulse_response(modes: ClassicalModes, dof: int, dt: float, m: int) -> np.ndarray:
    """Unit impulse response at one DOF sampled on t_j = j*dt, j = 0..m-1.

    h(t) = -sum_l phi_l[dof] (gamma_l / omega_dl) exp(-xi_l omega_l t) sin(omega_dl t),
    which vanishes identically for t <= 0 (retarded kernel); h[0] is exactly 0.
    """
    if dt <= 0 or m < 1:
        raise ValueError("dt must be positive and m >= 1")
    if not 0 <= dof < modes.phi.shape[1]:
        raise ValueError("dof out of range")
    t = np.arange(m) * dt
    coef = -modes.phi[:, dof] * modes.gamma / modes.omega_d
    decay = np.exp(-np.outer(modes.xi * modes.omega, t))
    return coef @ (decay * np.sin(np.outer(modes.omega_d, t)))


def _trap_convolve(u: np.ndarray, kernel: np.ndarray, dt: float) -> np.ndarray:
    """Trapezoidal-rule convolution of u with kernel on the shared grid.

    The discrete sum for output j only reads u[0..j]; endpoint half
    weights make x[0] exactly zero for any kernel.
    """
    m = len(u)
    full = np.convolve(u, kernel)[:m]
    return dt * (full - 0.5 * u[0] * kernel - 0.5 * u * kernel[0])


def duhamel_response(modes: ClassicalModes, dof: int, signal):
    """Convolve the input acceleration with the modal impulse response.

    Returns a new signal of the same type with the response samples;
    the zero initial condition holds bit-exactly.
    """
    u = np.asarray(signal.samples, dtype=float)
    h = impulse_response(modes, dof, signal.dt, len(u))
    return replace(signal, samples=_trap_convolve(u, h, signal.dt))


def newmark_response(system: MdofSystem, signal, beta: float = 0.25, gamma: float = 0.5) -> np.ndarray:
    """Implicit Newmark integration of the full system; all DOF trajectories.

    Defaults are the unconditionally stable average-acceleration
    parameters.  The effective load is -M i a(t), the convention the
    analytic Green's-function route embodies, so the two solvers agree
    up to discretisation error.  Returns an (n, m) displacement array.
    """
    u = np.asarray(signal.samples, dtype=float)
    dt = signal.dt
    n, m = system.n, len(u)
    load = -(system.mass @ system.influence)[:, None] * u[None, :]
    d = np.zeros((n, m))
    v = np.zeros((n, m))
    a = np.zeros((n, m))
    a[:, 0] = np.linalg.solve(system.mass, load[:, 0])
    c0 = 1.0 / (beta * dt * dt)
    c1 = gamma / (beta * dt)
    c2 = 1.0 / (beta * dt)
    c3 = 1.0 / (2.0 * beta) - 1.0
    c4 = gamma / beta - 1.0
    c5 = dt / 2.0 * (gamma / beta - 2.0)
    k_eff = system.stiffness + c0 * system.mass + c1 * system.damping
    lu, piv = scipy.linalg.lu_factor(k_eff)
    if np.abs(np.diag(lu)).min() < 1e-14 * np.abs(np.diag(lu)).max():
        raise NumericalError("singular effective stiffness")
    M, C = system.mass, system.damping
    for j in range(1, m):
        rhs = (
            load[:, j]
            + M @ (c0 * d[:, j - 1] + c2 * v[:, j - 1] + c3 * a[:, j - 1])
            + C @ (c1 * d[:, j - 1] + c4 * v[:, j - 1] + c5 * a[:, j - 1])
        )
        d[:, j] = scipy.linalg.lu_solve((lu, piv), rhs)
        a[:, j] = c0 * (d[:, j] - d[:, j - 1]) - c2 * v[:, j - 1] - c3 * a[:, j - 1]
        v[:, j] = v[:, j - 1] + dt * ((1.0 - gamma) * a[:, j - 1] + gamma * a[:, j])
    return d


def state_eigen(system: MdofSystem) -> NonClassicalModes:
    """Complex eigenpairs of the first-order state form of the system.

    Builds the 2n x 2n state matrix [[0, I], [-M^-1 K, -M^-1 C]] and
    keeps one representative of each conjugate pair (Im > 0), sorted by
    ascending |lambda|.  Real eigenvalues (critically damped or
    overdamped behaviour) are rejected; only underdamped systems are
    supported.
    """
    n = system.n
    minv_k = np.linalg.solve(system.mass, system.stiffness)
    minv_c = np.linalg.solve(system.mass, system.damping)
    state = np.zeros((2 * n, 2 * n))
    state[:n, n:] = np.eye(n)
    state[n:, :n] = -minv_k
    state[n:, n:] = -minv_c
    try:
        lam_all, vecs_all = np.linalg.eig(state)
    except np.linalg.LinAlgError as exc:
        raise EigenFailureError("eigen failure") from exc
    keep = np.imag(lam_all) > 1e-10 * np.abs(lam_all)
    if keep.sum() != n:
        raise InvalidSystemError(
            "invalid system: expected n underdamped conjugate pairs "
            f"(got {keep.sum()} of {n})"
        )
    lam = lam_all[keep]
    vecs = vecs_all[:, keep]
    order = np.argsort(np.abs(lam))
    lam = lam[order]
    vecs = vecs[:, order]
    # residual check on the full state eigenvectors
    res = state @ vecs - vecs * lam
    if np.any(
        np.linalg.norm(res, axis=0) > _STATE_RESIDUAL_TOL * np.linalg.norm(vecs, axis=0)
    ):
        raise EigenFailureError("eigen failure")
    psi = vecs[:n, :].T.copy()  # displacement partition, one mode per row
    # deterministic scaling: largest-magnitude entry real and equal to 1
    for row in psi:
        row /= row[np.argmax(np.abs(row))]

    omega = np.abs(lam)
    xi = -np.real(lam) / omega
    if np.any(xi >= 1.0) or np.any(xi < 0.0):
        raise InvalidSystemError("invalid system: damping ratio outside [0, 1)")
    M, C = system.mass, system.damping
    beta = np.empty(n, dtype=complex)
    for ell in range(n):
        p = psi[ell]
        beta[ell] = -(p @ M @ system.influence) / (
            2.0 * lam[ell] * (p @ M @ p) + p @ C @ p
        )
    two_beta_psi = 2.0 * beta[:, None] * psi
    alpha = np.real(two_beta_psi)
    gamma = np.imag(two_beta_psi)
    gamma_tilde = xi[:, None] * alpha - np.sqrt(1.0 - xi**2)[:, None] * gamma
    return NonClassicalModes(
        lam=lam,
        psi=psi,
        omega=omega,
        xi=xi,
        omega_d=omega * np.sqrt(1.0 - xi**2),
        beta=beta,
        alpha=alpha,
        gamma=gamma,
        gamma_tilde=gamma_tilde,
    )


def _complex_mode_kernels(modes: NonClassicalModes, ell: int, dt: float, m: int):
    """Displacement kernel of mode ell and its analytic time derivative."""
    t = np.arange(m) * dt
    a = modes.xi[ell] * modes.omega[ell]
    wd = modes.omega_d[ell]
    decay = np.exp(-a * t)
    h = -(1.0 / wd) * decay * np.sin(wd * t)
    hdot = decay * ((a / wd) * np.sin(wd * t) - np.cos(wd * t))
    return h, hdot


def nonclassical_response(modes: NonClassicalModes, dof: int, signal):
    """Superpose complex-mode convolution pairs into the response at one DOF.

    x(t) = -sum_l [ gamma_tilde_l omega_l D_l(t) + alpha_l Ddot_l(t) ]
    with D_l, Ddot_l trapezoidal convolutions of the input against the
    mode's displacement kernel and its analytic derivative.
    """
    u = np.asarray(signal.samples, dtype=float)
    m = len(u)
    x = np.zeros(m)
    for ell in range(modes.n):
        h, hdot = _complex_mode_kernels(modes, ell, signal.dt, m)
        d_l = _trap_convolve(u, h, signal.dt)
        ddot_l = _trap_convolve(u, hdot, signal.dt)
        x -= (
            modes.gamma_tilde[ell, dof] * modes.omega[ell] * d_l
            + modes.alpha[ell, dof] * ddot_l
        )
    return replace(signal, samples=x)


# ---------------------------------------------------------------------------
# damping-matrix builders and small-system helpers


def rayleigh_damping(mass: np.ndarray, stiffness: np.ndarray, a: float, b: float) -> np.ndarray:
    """Proportional damping C = a M + b K."""
    return a * np.asarray(mass, dtype=float) + b * np.asarray(stiffness, dtype=float)


def rayleigh_ratios(omega: np.ndarray, a: float, b: float) -> np.ndarray:
    """Modal damping ratios implied by Rayleigh coefficients."""
    omega = np.asarray(omega, dtype=float)
    return 0.5 * (a / omega + b * omega)


def modal_damping_matrix(mass: np.ndarray, stiffness: np.ndarray, ratios) -> np.ndarray:
    """Damping matrix realising the given per-mode ratios exactly.

    C = (M Phi) diag(2 xi_l omega_l) (Phi^T M) with mass-normalised
    mode shapes, the standard classical-damping construction.
    """
    mass = np.asarray(mass, dtype=float)
    stiffness = np.asarray(stiffness, dtype=float)
    xi = np.asarray(ratios, dtype=float)
    w2, vecs = scipy.linalg.eigh(stiffness, mass)
    omega = np.sqrt(w2)
    proj = vecs.T @ mass
    return proj.T @ np.diag(2.0 * xi * omega) @ proj


def shear_chain(n: int, mass: float, stiffness: float, ratios=None) -> MdofSystem:
    """Uniform shear-building chain; DOF 0 is the roof, DOF n-1 sits on the ground spring.

    Damping is built from per-mode ratios when given (scalar or
    vector), otherwise zero.
    """
    M = np.eye(n) * mass
    K = np.zeros((n, n))
    for i in range(n - 1):
        K[i, i] += stiffness
        K[i + 1, i + 1] += stiffness
        K[i, i + 1] -= stiffness
        K[i + 1, i] -= stiffness
    K[n - 1, n - 1] += stiffness
    if ratios is None:
        C = np.zeros((n, n))
    else:
        xi = np.broadcast_to(np.asarray(ratios, dtype=float), (n,))
        C = modal_damping_matrix(M, K, xi)
    return MdofSystem(mass=M, damping=C, stiffness=K, influence=np.ones(n))


# ---------------------------------------------------------------------------
# system definition files


@dataclass
class SystemSpec:
    """A parsed system file: the concrete system plus how damping was given."""

    system: MdofSystem
    damping_kind: str              # "matrix" | "rayleigh" | "modal_xi"
    modal_xi: np.ndarray | None    # per-mode ratios when known
    rayleigh: tuple[float, float] | None = None


def save_system(spec: SystemSpec, path) -> None:
    """Write a system definition file (key/value plus row-major matrix blocks)."""
    sys_ = spec.system
    lines = [
        "# responet system definition",
        "# units: mass kg, damping N*s/m, stiffness N/m, influence dimensionless",
        "# matrices are row-major, one row per line; DOF 0 is the monitored (roof) DOF",
        f"n {sys_.n}",
    ]

    def block(name, mat):
        lines.append(name)
        for row in mat:
            lines.append(" ".join(f"{v:.17g}" for v in row))

    block("mass", sys_.mass)
    block("stiffness", sys_.stiffness)
    if spec.damping_kind == "modal_xi":
        lines.append("modal_xi " + " ".join(f"{v:.17g}" for v in spec.modal_xi))
    elif spec.damping_kind == "rayleigh":
        a, b = spec.rayleigh
        lines.append(f"rayleigh {a:.17g} {b:.17g}")
    else:
        block("damping", sys_.damping)
    lines.append("influence " + " ".join(f"{v:.17g}" for v in sys_.influence))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_system(path) -> SystemSpec:
    """Parse a system definition file written by ``save_system`` (or by hand)."""
    with open(path) as fh:
        raw = [ln.strip() for ln in fh]
    lines = [ln for ln in raw if ln and not ln.startswith("#")]
    idx = 0

    def take():
        nonlocal idx
        if idx >= len(lines):
            raise ValueError("system file truncated")
        ln = lines[idx]
        idx += 1
        return ln

    first = take().split()
    if first[0] != "n":
        raise ValueError("system file must start with 'n <count>'")
    n = int(first[1])
    mats: dict[str, np.ndarray] = {}
    modal_xi = None
    rayleigh = None
    influence = None
    while idx < len(lines):
        head = take().split()
        key = head[0]
        if key in ("mass", "stiffness", "damping"):
            rows = [np.fromstring(take(), sep=" ") for _ in range(n)]
            mat = np.vstack(rows)
            if mat.shape != (n, n):
                raise ValueError(f"system file: bad {key} block shape")
            mats[key] = mat
        elif key == "modal_xi":
            modal_xi = np.asarray([float(v) for v in head[1:]])
            if modal_xi.shape != (n,):
                raise ValueError("system file: modal_xi length mismatch")
        elif key == "rayleigh":
            rayleigh = (float(head[1]), float(head[2]))
        elif key == "influence":
            influence = np.asarray([float(v) for v in head[1:]])
        else:
            raise ValueError(f"system file: unknown field {key!r}")
    if "mass" not in mats or "stiffness" not in mats:
        raise ValueError("system file: mass and stiffness blocks are required")
    if influence is None:
        influence = np.ones(n)
    given = [k for k, v in (("matrix", mats.get("damping")), ("rayleigh", rayleigh), ("modal_xi", modal_xi)) if v is not None]
    if len(given) != 1:
        raise ValueError("system file: give exactly one of damping / rayleigh / modal_xi")
    kind = given[0]
    if kind == "matrix":
        C = mats["damping"]
    elif kind == "rayleigh":
        C = rayleigh_damping(mats["mass"], mats["stiffness"], *rayleigh)
        w2 = scipy.linalg.eigh(mats["stiffness"], mats["mass"], eigvals_only=True)
        modal_xi = rayleigh_ratios(np.sqrt(w2), *rayleigh)
    else:
        C = modal_damping_matrix(mats["mass"], mats["stiffness"], modal_xi)
    system = MdofSystem(mass=mats["mass"], damping=C, stiffness=mats["stiffness"], influence=influence)
    return SystemSpec(system=system, damping_kind=kind, modal_xi=modal_xi, rayleigh=rayleigh)
