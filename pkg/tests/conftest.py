import numpy as np
import pytest

from phara.concavify import concave_envelope
from phara.presets import demo_market, multi_kink_utility, CONTRACT_PARAMS
from phara.solver import solve_multiplier
from phara.utility import INF, PharaPiece, PharaUtility, crra_utility, participating_contract_utility


@pytest.fixture(scope="session")
def market():
    return demo_market()


@pytest.fixture(scope="session")
def demo_utility():
    return multi_kink_utility()


@pytest.fixture(scope="session")
def demo_envelope(demo_utility):
    return concave_envelope(demo_utility)


@pytest.fixture(scope="session")
def contract_utility():
    return participating_contract_utility(**CONTRACT_PARAMS)


@pytest.fixture(scope="session")
def contract_envelope(contract_utility):
    return concave_envelope(contract_utility)


@pytest.fixture(scope="session")
def crra_envelope():
    return concave_envelope(crra_utility(0.5)).envelope


@pytest.fixture(scope="session")
def demo_dual(demo_envelope, market):
    return solve_multiplier(demo_envelope.envelope, market, 25.0)


@pytest.fixture(scope="session")
def contract_dual(contract_envelope, market):
    return solve_multiplier(contract_envelope.envelope, market, 1.8)


def random_concave_envelope(rng: np.random.Generator,
                            R: float | None = None) -> PharaUtility:
    """A random legal concave utility whose curved pieces share one R.

    Cells alternate between power branches (benchmark strictly below the
    cell) and chords, with nonincreasing slopes across junctions; the tail
    is always a power branch so demand stays finite.
    """
    if R is None:
        R = float(rng.uniform(0.2, 5.0))
    a0 = float(rng.uniform(0.0, 5.0))
    x = a0
    u = float(rng.uniform(-1.0, 1.0))
    slope = float(rng.uniform(1.0, 4.0))
    pieces = []
    for _ in range(int(rng.integers(1, 5))):
        width = float(rng.uniform(0.5, 4.0))
        if rng.random() < 0.4:
            piece = PharaPiece(a_lo=x, a_hi=x + width, R=0.0, anchor_x=x,
                               anchor_u=u, anchor_slope=slope)
        else:
            A = x - float(rng.uniform(0.2, 3.0))
            piece = PharaPiece(a_lo=x, a_hi=x + width, R=R, A=A, anchor_x=x,
                               anchor_u=u, anchor_slope=slope)
        pieces.append(piece)
        x += width
        u = float(piece.value(x))
        slope = float(piece.slope(x))
        if rng.random() < 0.5:
            slope *= float(rng.uniform(0.5, 0.95))  # concave kink
    A = x - float(rng.uniform(0.2, 3.0))
    pieces.append(PharaPiece(a_lo=x, a_hi=INF, R=R, A=A, anchor_x=x,
                             anchor_u=u, anchor_slope=slope))
    return PharaUtility(a0=a0, pieces=tuple(pieces), a0_included=True)


def random_raw_utility(rng: np.random.Generator) -> PharaUtility:
    """A random raw utility with every legal pathology.

    Cells may be concave powers, convex powers (benchmark at or beyond the
    right end), flats, rising lines, or exponentials; junctions may kink
    upwards or jump upwards.  The tail is always a concave power so the
    envelope exists.
    """
    a0 = float(rng.uniform(-2.0, 5.0))
    x = a0
    u = float(rng.uniform(-2.0, 2.0))
    pieces = []
    for _ in range(int(rng.integers(1, 6))):
        width = float(rng.uniform(0.4, 3.0))
        kind = rng.choice(["concave", "convex", "flat", "line", "exp"])
        slope = float(rng.uniform(0.05, 3.0))
        if kind == "concave":
            A = x - float(rng.uniform(0.1, 2.0))
            piece = PharaPiece(a_lo=x, a_hi=x + width,
                               R=float(rng.uniform(0.2, 3.0)), A=A,
                               anchor_x=x, anchor_u=u, anchor_slope=slope)
        elif kind == "convex":
            A = x + width + float(rng.uniform(0.0, 1.0))
            piece = PharaPiece(a_lo=x, a_hi=x + width,
                               R=float(rng.uniform(0.2, 0.8)), A=A,
                               anchor_x=x, anchor_u=u, anchor_slope=slope)
        elif kind == "flat":
            piece = PharaPiece(a_lo=x, a_hi=x + width, R=0.0, anchor_x=x,
                               anchor_u=u, anchor_slope=0.0)
        elif kind == "line":
            piece = PharaPiece(a_lo=x, a_hi=x + width, R=0.0, anchor_x=x,
                               anchor_u=u, anchor_slope=slope)
        else:
            piece = PharaPiece(a_lo=x, a_hi=x + width, R=float("inf"),
                               anchor_x=x, anchor_u=u, anchor_slope=slope,
                               alpha=float(rng.uniform(0.3, 3.0)))
        pieces.append(piece)
        x += width
        u = float(piece.value(x))
        if rng.random() < 0.25:
            u += float(rng.uniform(0.0, 0.8))  # upward jump at the junction
    A = x - float(rng.uniform(0.1, 2.0))
    pieces.append(PharaPiece(a_lo=x, a_hi=INF, R=float(rng.uniform(0.2, 3.0)),
                             A=A, anchor_x=x, anchor_u=u,
                             anchor_slope=float(rng.uniform(0.05, 2.0))))
    return PharaUtility(a0=a0, pieces=tuple(pieces), a0_included=True)


def interesting_multipliers(env: PharaUtility, rng: np.random.Generator,
                            n: int) -> np.ndarray:
    """y*xi levels spanning all pieces of an envelope, away from tie slopes."""
    finite = [env.gamma_plus(k) for k in range(env.n_pieces)]
    finite += [env.gamma_minus(k) for k in range(1, env.n_pieces + 1)]
    finite += [p.anchor_slope for p in env.pieces]
    finite = [s for s in finite if np.isfinite(s) and s > 0.0]
    lo, hi = min(finite) / 30.0, max(finite) * 30.0
    out = np.exp(rng.uniform(np.log(lo), np.log(hi), size=n))
    chord_slopes = [env.pieces[k].anchor_slope for k in range(env.n_pieces)
                    if env.pieces[k].R == 0.0]
    for s in chord_slopes:
        near = np.abs(np.log(out / s)) < 1e-6
        out[near] *= 1.01
    return out
