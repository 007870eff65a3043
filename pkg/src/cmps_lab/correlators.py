"""Normal-ordered field correlators from the boundary picture.

Field operators acting on the physical state translate into superoperators
applied to the flattened boundary state, read left to right in position
order:

    annihilation at x      rho -> R rho            (R kron 1)
    creation at x          rho -> rho R^dag        (1 kron conj R)
    derivative annihil.    rho -> X rho            X = -[Q, R]
    derivative creation    rho -> rho X^dag        (1 kron conj X)
    pair density at x      rho -> R rho R^dag      (R kron conj R)

with free propagation exp(L dx) between consecutive insertion points and
the trace functional closing the chain.  Translation invariance makes the
derivative insertions commutator form exact (no explicit x dependence of
R).  In the thermodynamic geometry the chain opens on the stationary state;
in a finite geometry it opens on the boundary state at x = 0, insertions
are anchored at the left edge (the first insertion sits at x1 = 0 for
separation grids), and the chain is closed by propagating to the right
edge and dividing by the norm.

A two-point function <create(0) annihilate(d)> therefore evaluates to
vec(1)^dag (R kron 1) exp(L d) (1 kron conj R) vec(rho_ss), and the pair
correlator g2(d) divides the double pair-density insertion by the squared
density.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import CmpsParams, Finite, Thermodynamic, q_matrix
from .errors import (
    GaplessStateError,
    NegativeDistanceError,
    NonHermitianKError,
    PositionOutOfRangeError,
    ShapeMismatchError,
    SignalBelowFloorError,
    StepNotPositiveError,
    UnsortedPositionsError,
    ZeroDensityError,
)
from .liouville import (
    build_liouvillian,
    require_unique_fixed_space,
    steady_state,
    trace_functional,
    vectorize,
)

SIGNAL_FLOOR = 1e-13


@dataclass(frozen=True)
class Insertion:
    """A point operator of the calculus: a kind tag plus its superoperator."""

    kind: str
    superop: np.ndarray


def annihilate(params):
    d = params.dim
    return Insertion("annihilate", np.kron(params.R, np.eye(d)))


def create(params):
    d = params.dim
    return Insertion("create", np.kron(np.eye(d), params.R.conj()))


def _deriv_matrix(params):
    q = q_matrix(params).mat
    return -(q @ params.R - params.R @ q)


def deriv_annihilate(params):
    d = params.dim
    return Insertion("deriv_annihilate", np.kron(_deriv_matrix(params), np.eye(d)))


def deriv_create(params):
    d = params.dim
    return Insertion("deriv_create", np.kron(np.eye(d), _deriv_matrix(params).conj()))


def pair_density(params):
    return Insertion("pair_density", np.kron(params.R, params.R.conj()))


@dataclass(frozen=True)
class CorrelatorResult:
    separations: np.ndarray
    values: np.ndarray
    normalization: float
    estimator: str


class _Chain:
    """Shared evaluation state: generator, boundary vectors, exp(L dx) cache."""

    def __init__(self, params):
        self.params = params
        self.L = build_liouvillian(params.K, params.R)
        self.dim = params.dim
        self.left = trace_functional(params.dim)
        self._cache = {}
        if isinstance(params.geometry, Thermodynamic):
            self.spectral = require_unique_fixed_space(steady_state(self.L))
            self.right = vectorize(self.spectral.steady_state)
            self.length = None
        else:
            self.spectral = None
            self.right = vectorize(params.geometry.boundary_rho)
            self.length = params.geometry.length

    def step(self, dx):
        if dx == 0.0:
            return None
        key = float(dx)
        mat = self._cache.get(key)
        if mat is None:
            mat = scipy.linalg.expm(self.L.mat * dx)
            self._cache[key] = mat
        return mat

    def advance(self, v, dx):
        mat = self.step(dx)
        return v if mat is None else mat @ v

    def norm_value(self):
        if self.length is None:
            return 1.0
        val = (self.left @ self.advance(self.right, self.length)).real
        return float(val)

    def evaluate(self, insertions):
        """Close a chain of (position, Insertion) pairs, ascending order."""
        if not insertions:
            return complex(self.norm_value() / self.norm_value())
        positions = [float(p) for p, _ in insertions]
        if any(b < a for a, b in zip(positions, positions[1:])):
            raise UnsortedPositionsError(f"insertion positions must ascend, got {positions}")
        if self.length is not None:
            if positions[0] < 0.0 or positions[-1] > self.length + 1e-12:
                raise PositionOutOfRangeError(
                    f"positions {positions} outside [0, {self.length}]"
                )
        v = self.right
        prev = positions[0] if self.length is None else 0.0
        for pos, ins in insertions:
            if ins.superop.shape != (self.dim**2, self.dim**2):
                raise ShapeMismatchError("insertion dimension does not match parameters")
            v = self.advance(v, pos - prev)
            v = ins.superop @ v
            prev = pos
        if self.length is not None:
            v = self.advance(v, self.length - prev)
            return complex(self.left @ v) / self.norm_value()
        return complex(self.left @ v)


def expectation(params, insertions):
    """Evaluate one normal-ordered product given as [(position, Insertion)].

    Positions must be ascending; insertions sharing a position are applied
    in list order.  Thermodynamic chains open on the stationary state, so
    only position differences matter; finite chains are normalized by the
    norm of the fully propagated boundary state.
    """
    return _Chain(params).evaluate(insertions)


def density(params, chain=None):
    """Particle density n = tr(R rho R^dag) at the anchor point."""
    chain = chain or _Chain(params)
    val = chain.evaluate([(0.0, pair_density(params))])
    return float(val.real)


def two_point(params, separations):
    """<create(x1) annihilate(x2)> on a grid of separations d = x2 - x1 >= 0.

    The d = 0 value coincides with the density.  Finite geometry anchors
    x1 = 0.
    """
    seps = np.atleast_1d(np.asarray(separations, dtype=float))
    if seps.size and seps.min() < 0:
        raise NegativeDistanceError("separations must be >= 0")
    chain = _Chain(params)
    order = np.argsort(seps, kind="stable")
    values = np.empty(seps.size, dtype=complex)
    w = create(params).superop @ chain.right
    ann = annihilate(params).superop
    prev = 0.0
    for idx in order:
        d = float(seps[idx])
        w = chain.advance(w, d - prev)
        prev = d
        v = ann @ w
        if chain.length is not None:
            if d > chain.length + 1e-12:
                raise PositionOutOfRangeError(f"separation {d} exceeds length {chain.length}")
            v = chain.advance(v, chain.length - d)
            values[idx] = complex(chain.left @ v) / chain.norm_value()
        else:
            values[idx] = complex(chain.left @ v)
    return CorrelatorResult(
        separations=seps,
        values=values,
        normalization=chain.norm_value(),
        estimator="insertion-calculus",
    )


def pair_correlation(params, separations):
    """Normalized pair correlator g2(d); requires nonzero density."""
    seps = np.atleast_1d(np.asarray(separations, dtype=float))
    if seps.size and seps.min() < 0:
        raise NegativeDistanceError("separations must be >= 0")
    chain = _Chain(params)
    n = density(params, chain)
    if n <= 0.0 or n * n < 1e-28:
        raise ZeroDensityError("pair correlator undefined at zero density")
    order = np.argsort(seps, kind="stable")
    values = np.empty(seps.size, dtype=complex)
    pd = pair_density(params).superop
    w = pd @ chain.right
    prev = 0.0
    for idx in order:
        d = float(seps[idx])
        w = chain.advance(w, d - prev)
        prev = d
        v = pd @ w
        if chain.length is not None:
            if d > chain.length + 1e-12:
                raise PositionOutOfRangeError(f"separation {d} exceeds length {chain.length}")
            v = chain.advance(v, chain.length - d)
            values[idx] = complex(chain.left @ v) / chain.norm_value()
        else:
            values[idx] = complex(chain.left @ v)
    return CorrelatorResult(
        separations=seps,
        values=values / n**2,
        normalization=n * n,
        estimator="insertion-calculus",
    )


def kinetic_density(params):
    """<derivative-create derivative-annihilate> at one point; nonnegative."""
    chain = _Chain(params)
    val = chain.evaluate([(0.0, deriv_create(params)), (0.0, deriv_annihilate(params))])
    return float(val.real)


def lieb_liniger_energy_density(params, c, mu):
    """Energy density e = kinetic + c <pair pair at 0> - mu * density."""
    chain = _Chain(params)
    kin = chain.evaluate(
        [(0.0, deriv_create(params)), (0.0, deriv_annihilate(params))]
    ).real
    pd = pair_density(params)
    inter = chain.evaluate([(0.0, pd), (0.0, pd)]).real
    n = chain.evaluate([(0.0, pd)]).real
    return float(kin + c * inter - mu * n)


# -- spectral envelope and decay fits ---------------------------------------


def spectral_envelope(params):
    """Mode decomposition of the two-point function.

    Returns (c0, prefactor, gap): the disconnected constant carried by the
    fixed-point mode, the sum of the remaining coefficient magnitudes, and
    the spectral gap.  Every nonzero mode decays at least as fast as
    e^{-gap d}, so |two_point(d) - c0| <= prefactor * e^{-gap d} pointwise.
    """
    chain = _Chain(params)
    if chain.spectral is None:
        raise ShapeMismatchError("spectral envelope is a thermodynamic quantity")
    spec = chain.spectral
    if spec.gapless:
        raise GaplessStateError("no spectral gap; correlations need not decay")
    evals, vecs = np.linalg.eig(chain.L.mat)
    try:
        winv = np.linalg.inv(vecs)
    except np.linalg.LinAlgError as exc:
        raise GaplessStateError(f"generator not diagonalizable: {exc}") from exc
    row = chain.left @ annihilate(params).superop
    col = create(params).superop @ chain.right
    coefs = (row @ vecs) * (winv @ col)
    zero_idx = int(np.argmin(np.abs(evals)))
    c0 = complex(coefs[zero_idx])
    pref = float(sum(abs(coefs[k]) for k in range(coefs.size) if k != zero_idx))
    return c0, pref, spec.gap


@dataclass(frozen=True)
class DecayFit:
    rate: float
    prefactor: float
    residual: float
    n_used: int


def decay_fit(params, d_min, d_max, n_points=33):
    """Least-squares decay rate of the connected two-point envelope.

    Fits log |two_point(d) - c0| over [d_min, d_max], where c0 is the
    fixed-point-mode constant (subtracting it is what makes the fit see the
    slowest genuinely decaying mode).  Points below the 1e-13 signal floor
    are dropped; fewer than two surviving points is an error.  Complex slow
    modes make the envelope oscillate, so the fitted rate is then only an
    envelope-scale estimate (callers should check the residual).
    """
    if d_max <= d_min:
        raise NegativeDistanceError("need d_max > d_min")
    if isinstance(params.geometry, Finite):
        c0 = 0.0  # boundary-driven signal, no stationary mode to subtract
    else:
        c0, _, _ = spectral_envelope(params)  # raises GaplessState when unfit
    grid = np.linspace(d_min, d_max, n_points)
    vals = two_point(params, grid).values
    y = np.abs(vals - c0)
    mask = y > SIGNAL_FLOOR
    if mask.sum() < 2:
        raise SignalBelowFloorError(
            f"connected signal below {SIGNAL_FLOOR} on [{d_min}, {d_max}]"
        )
    x = grid[mask]
    logy = np.log(y[mask])
    coeffs = np.polyfit(x, logy, 1)
    fit = np.polyval(coeffs, x)
    residual = float(np.sqrt(np.mean((logy - fit) ** 2)))
    return DecayFit(
        rate=float(-coeffs[0]),
        prefactor=float(np.exp(coeffs[1])),
        residual=residual,
        n_used=int(mask.sum()),
    )


# -- family derivative -------------------------------------------------------


def _generator_derivative(params, dK, dR):
    """Directional derivative of the vectorized generator along (dK, dR)."""
    d = params.dim
    eye = np.eye(d)
    R = params.R
    s = dR.conj().T @ R + R.conj().T @ dR
    return (
        -1j * np.kron(dK, eye)
        + 1j * np.kron(eye, dK.T)
        - 0.5 * (np.kron(s, eye) + np.kron(eye, s.T))
        + np.kron(dR, R.conj())
        + np.kron(R, dR.conj())
    )


def _insertion_derivative(params, ins, dK, dR):
    """Directional derivative of a point insertion's superoperator.

    The factory insertions are built from (K, R), so they move with the
    family; the product rule needs their variation alongside the generator's.
    Returns None when the variation vanishes identically.
    """
    d = params.dim
    eye = np.eye(d)
    R = params.R
    if ins.kind == "annihilate":
        dsup = np.kron(dR, eye)
    elif ins.kind == "create":
        dsup = np.kron(eye, dR.conj())
    elif ins.kind == "pair_density":
        dsup = np.kron(dR, R.conj()) + np.kron(R, dR.conj())
    elif ins.kind in ("deriv_annihilate", "deriv_create"):
        q = q_matrix(params).mat
        dq = -1j * dK - 0.5 * (dR.conj().T @ R + R.conj().T @ dR)
        dx = -(dq @ R - R @ dq) - (q @ dR - dR @ q)
        if ins.kind == "deriv_annihilate":
            dsup = np.kron(dx, eye)
        else:
            dsup = np.kron(eye, dx.conj())
    else:
        raise ShapeMismatchError(
            f"cannot differentiate insertion of unknown kind {ins.kind!r}"
        )
    if not np.any(dsup):
        return None
    return dsup


def _simpson_nodes(a, b, max_step):
    """Even-count uniform subdivision of [a, b] and its Simpson weights."""
    length = b - a
    n = max(2, int(np.ceil(length / max_step)))
    if n % 2:
        n += 1
    xs = np.linspace(a, b, n + 1)
    h = length / n
    w = np.full(n + 1, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return xs, w * (h / 3.0)


def family_derivative(params, dK, dR, insertions, grid_step=None, window=None):
    """d/dt of an insertion expectation along (K + t dK, R + t dR) at t = 0.

    The derivative is the position integral of the generator-derivative
    insertion threaded through the observable chain.  Contributions beyond
    the last observable insertion vanish identically (the trace functional
    annihilates the generator derivative), so the integral runs from the
    window start to the last insertion.  Thermodynamic windows extend
    20/gap before the first insertion, enough to capture the stationary
    state's own dependence on the family; the quadrature is composite
    Simpson with step <= min(0.01, 0.1/gap) on each smooth segment.
    """
    dK = np.asarray(dK, dtype=complex)
    dR = np.asarray(dR, dtype=complex)
    if dK.shape != (params.dim, params.dim) or dR.shape != (params.dim, params.dim):
        raise ShapeMismatchError("dK and dR must match the parameter dimension")
    if np.abs(dK - dK.conj().T).max() > 1e-12 * max(1.0, np.abs(dK).max()):
        raise NonHermitianKError("dK must be Hermitian (K stays Hermitian along the family)")
    if not insertions:
        return 0.0j  # trace preservation along the family: norm derivative is 0
    positions = [float(p) for p, _ in insertions]
    if any(b < a for a, b in zip(positions, positions[1:])):
        raise UnsortedPositionsError(f"insertion positions must ascend, got {positions}")

    chain = _Chain(params)
    dgen = _generator_derivative(params, dK, dR)

    if chain.length is None:
        gap = chain.spectral.gap
        if chain.spectral.gapless:
            raise GaplessStateError("thermodynamic family derivative needs a spectral gap")
        width = (20.0 / gap) if window is None else float(window)
        start = positions[0] - width
        step_cap = min(0.01, 0.1 / gap) if grid_step is None else float(grid_step)
    else:
        if positions[0] < 0.0 or positions[-1] > chain.length + 1e-12:
            raise PositionOutOfRangeError(f"positions {positions} outside [0, {chain.length}]")
        start = 0.0
        step_cap = 0.01 if grid_step is None else float(grid_step)
    if step_cap <= 0:
        raise StepNotPositiveError("grid step must be positive")

    # Segment breakpoints: window start, then each insertion position.
    breaks = [start]
    for p in positions:
        if p > breaks[-1]:
            breaks.append(p)

    # Right vectors marched forward; insertion superoperators applied when
    # their position is passed (at a breakpoint, after the propagation).
    seg_nodes, seg_weights, seg_right = [], [], []
    v = chain.right
    ins_iter = iter(insertions)
    pending = next(ins_iter, None)
    # apply any insertion sitting exactly at the start
    while pending is not None and float(pending[0]) <= start:
        v = pending[1].superop @ v
        pending = next(ins_iter, None)
    for a, b in zip(breaks, breaks[1:]):
        xs, wts = _simpson_nodes(a, b, step_cap)
        stepmat = chain.step(xs[1] - xs[0])
        rights = np.empty((xs.size, v.size), dtype=complex)
        rights[0] = v
        for i in range(1, xs.size):
            v = stepmat @ v if stepmat is not None else v
            rights[i] = v
        seg_nodes.append(xs)
        seg_weights.append(wts)
        seg_right.append(rights)
        while pending is not None and abs(float(pending[0]) - b) <= 1e-12:
            v = pending[1].superop @ v
            pending = next(ins_iter, None)

    # Left row vectors marched backward from the closed end.
    value = 0.0j
    left = chain.left.copy()
    if chain.length is not None:
        mat = chain.step(chain.length - positions[-1])
        if mat is not None:
            left = left @ mat
    remaining = list(insertions)
    for seg in range(len(breaks) - 2, -1, -1):
        b = breaks[seg + 1]
        while remaining and float(remaining[-1][0]) >= b - 1e-12:
            left = left @ remaining.pop()[1].superop
        xs = seg_nodes[seg]
        stepmat = chain.step(xs[1] - xs[0])
        lefts = np.empty((xs.size, left.size), dtype=complex)
        lefts[-1] = left
        for i in range(xs.size - 2, -1, -1):
            left = left @ stepmat if stepmat is not None else left
            lefts[i] = left
        mids = seg_right[seg] @ dgen.T  # row i: (dgen @ rights[i])^T
        value += np.sum(seg_weights[seg] * np.einsum("ij,ij->i", lefts, mids))
    if chain.length is not None:
        value /= chain.norm_value()

    # Product rule: the insertions themselves are built from (K, R) and move
    # with the family.  The norm needs no such term (it is stationary).
    for idx, (pos, ins) in enumerate(insertions):
        dsup = _insertion_derivative(params, ins, dK, dR)
        if dsup is None:
            continue
        replaced = list(insertions)
        replaced[idx] = (pos, Insertion(ins.kind, dsup))
        value += chain.evaluate(replaced)
    return complex(value)


# -- discretized generating functional ---------------------------------------


@dataclass(frozen=True)
class SourceField:
    """Per-site complex sources (lam couples to annihilation-type insertions,
    mu to derivative-annihilation ones; conjugates couple to the creation
    side).  Site r covers [r eps, (r+1) eps)."""

    lam: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.lam, dtype=complex))
        mu = np.atleast_1d(np.asarray(self.mu, dtype=complex))
        if lam.shape != mu.shape or lam.ndim != 1 or lam.size < 1:
            raise ShapeMismatchError(
                f"lam and mu must be equal-length 1d arrays, got {lam.shape}, {mu.shape}"
            )
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "mu", mu)

    @property
    def n_sites(self):
        return self.lam.size


def generating_functional(params, sources, eps):
    """Discretized source functional Z[J].

    Z multiplies per-site transfer factors exp[eps (L + J_r)] with
    J_r = lam_r (R kron 1) + conj(lam_r)(1 kron conj R)
        + mu_r (X kron 1) + conj(mu_r)(1 kron conj X),  X = -[Q, R],
    between the opening state and the trace functional.  All sources zero
    gives exactly the state norm (1 for both geometries).  Wirtinger
    derivatives with respect to lam_r / conj(lam_r) reproduce eps times the
    annihilation / creation insertions up to O(eps) lattice error.
    """
    if not isinstance(sources, SourceField):
        raise ShapeMismatchError("sources must be a SourceField")
    eps = float(eps)
    if eps <= 0:
        raise StepNotPositiveError(f"lattice step must be positive, got {eps}")
    chain = _Chain(params)
    n = sources.n_sites
    if chain.length is not None:
        if abs(n * eps - chain.length) > 1e-9 * max(1.0, chain.length):
            raise ShapeMismatchError(
                f"{n} sites of step {eps} do not cover length {chain.length}"
            )
    ann = annihilate(params).superop
    cre = create(params).superop
    dann = deriv_annihilate(params).superop
    dcre = deriv_create(params).superop
    free = scipy.linalg.expm(chain.L.mat * eps)
    v = chain.right
    norm_v = chain.right
    for r in range(n):
        lam = complex(sources.lam[r])
        mu = complex(sources.mu[r])
        if lam == 0 and mu == 0:
            v = free @ v
        else:
            j = lam * ann + np.conj(lam) * cre + mu * dann + np.conj(mu) * dcre
            v = scipy.linalg.expm((chain.L.mat + j) * eps) @ v
        if chain.length is not None:
            norm_v = free @ norm_v
    if chain.length is not None:
        return complex(chain.left @ v) / complex(chain.left @ norm_v)
    return complex(chain.left @ v)


def _wirtinger_pair(f, h):
    """Wirtinger derivatives (df/dz, df/dzbar) at 0 by central differences."""
    fx = (f(h) - f(-h)) / (2 * h)
    fy = (f(1j * h) - f(-1j * h)) / (2 * h)
    return 0.5 * (fx - 1j * fy), 0.5 * (fx + 1j * fy)


def source_consistency_check(params, eps, h, n_sites, site_pair=None):
    """Finite-difference consistency of the discretized source functional.

    Differentiates Z with respect to the complex source at single sites and
    compares against the corresponding insertion expectations: dZ/dlam_r
    against eps * <annihilate at r eps> and the mixed second derivative
    d2 Z / dlam_s dconj(lam_r) against eps^2 * <create(r) ... annihilate(s)>.
    Returns a dict of absolute errors (after dividing out the eps powers);
    both shrink under simultaneous refinement of eps and h (O(eps) + O(h^2)).
    """
    eps = float(eps)
    h = float(h)
    n_sites = int(n_sites)
    if eps <= 0 or h <= 0:
        raise StepNotPositiveError("eps and h must be positive")
    if n_sites < 4:
        raise ShapeMismatchError("need at least 4 lattice sites")
    if site_pair is None:
        site_pair = (n_sites // 4, (3 * n_sites) // 4)
    r, s = int(site_pair[0]), int(site_pair[1])
    if not (0 <= r < n_sites and 0 <= s < n_sites and r != s):
        raise ShapeMismatchError(f"site pair {site_pair} invalid for {n_sites} sites")
    zeros = np.zeros(n_sites, dtype=complex)

    def z_single(lam_r):
        lam = zeros.copy()
        lam[r] = lam_r
        return generating_functional(params, SourceField(lam, zeros), eps)

    d_lam, d_lam_bar = _wirtinger_pair(z_single, h)
    single_ann = expectation(params, [(r * eps, annihilate(params))])
    single_cre = expectation(params, [(r * eps, create(params))])
    err_single = max(
        abs(d_lam / eps - single_ann),
        abs(d_lam_bar / eps - single_cre),
    )

    def z_pair(lam_r, lam_s):
        lam = zeros.copy()
        lam[r] = lam_r
        lam[s] = lam_s
        return generating_functional(params, SourceField(lam, zeros), eps)

    # d2 Z / d lam_s d conj(lam_r): creation at site r, annihilation at site s.
    def d_dlam_s(lam_r):
        d1, _ = _wirtinger_pair(lambda x: z_pair(lam_r, x), h)
        return d1

    _, mixed = _wirtinger_pair(d_dlam_s, h)
    lo, hi = sorted((r, s))
    kinds = {r: create(params), s: annihilate(params)}
    pair_val = expectation(params, [(lo * eps, kinds[lo]), (hi * eps, kinds[hi])])
    err_pair = abs(mixed / eps**2 - pair_val)
    return {
        "single_insertion_error": float(err_single),
        "two_insertion_error": float(err_pair),
        "single_insertion_value": single_ann,
        "two_insertion_value": pair_val,
        "epsilon": eps,
        "h": h,
        "sites": (r, s),
    }
