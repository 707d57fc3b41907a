"""Trigonometric approximation on an equispaced periodic grid.

Vallee-Poussin sums are applied as Fourier multipliers. The closed-form
kernel is kept only as a cross-check of the multiplier.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_GRID_SIZE = 1024


class AliasingError(ValueError):
    """A requested degree does not fit below the grid's Nyquist limit."""


@dataclass(frozen=True)
class PeriodicGrid:
    """``size`` equispaced nodes ``2*pi*j/size`` on [0, 2*pi)."""

    size: int = DEFAULT_GRID_SIZE

    def __post_init__(self):
        if self.size < 4 or self.size % 2:
            raise ValueError(f"grid size must be even and >= 4, got {self.size}")

    @property
    def nodes(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.size) / self.size

    @property
    def step(self) -> float:
        return 2.0 * np.pi / self.size

    def check_degree(self, n: int) -> None:
        if n < 0 or 2 * n >= self.size:
            raise AliasingError(f"degree {n} needs 2*degree < grid size {self.size}")


@dataclass(frozen=True)
class GridFunction:
    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (self.grid.size,):
            raise ValueError(f"expected {self.grid.size} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function values must be finite")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_callable(cls, func, grid: PeriodicGrid | None = None) -> "GridFunction":
        grid = grid or PeriodicGrid()
        return cls(grid, func(grid.nodes))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        return GridFunction(self.grid, self.values - other.values)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        return GridFunction(self.grid, self.values + other.values)

    def __mul__(self, scalar: float) -> "GridFunction":
        return GridFunction(self.grid, self.values * scalar)

    __rmul__ = __mul__


@dataclass(frozen=True)
class TrigCoefficients:
    """Complex coefficients ``c_k`` for ``k = -degree..degree`` (index ``k + degree``)."""

    degree: int
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        if len(self.coeffs) != 2 * self.degree + 1:
            raise ValueError("coefficient array length must be 2*degree + 1")

    def __getitem__(self, k: int) -> complex:
        if abs(k) > self.degree:
            return 0j
        return complex(self.coeffs[k + self.degree])

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(-self.degree, self.degree + 1)


@dataclass(frozen=True)
class VPOperatorSpec:
    """Window ``p`` of the Vallee-Poussin mean ``V_{n,p}``; ``p`` defaults to ``n // 2``.

    ``p = 0`` is allowed so that ``n = 1`` (the first element of every
    admissible sequence) is well defined; it reduces to the partial sum ``S_1``.
    """

    n: int
    p: int | None = None

    def __post_init__(self):
        p = self.n // 2 if self.p is None else self.p
        if self.n < 0 or not 0 <= p <= self.n:
            raise ValueError(f"need 0 <= p <= n, got n={self.n}, p={p}")
        object.__setattr__(self, "p", p)


@dataclass(frozen=True)
class DyadicSequence:
    """Strictly increasing naturals ``n(1) = 1 < n(2) < ...`` indexing the blocks."""

    terms: tuple

    def __post_init__(self):
        terms = tuple(int(t) for t in self.terms)
        if not terms or terms[0] != 1:
            raise ValueError("sequence must start at n(1) = 1")
        if any(b <= a for a, b in zip(terms, terms[1:])):
            raise ValueError("sequence must be strictly increasing")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def powers_of_two(cls, length: int) -> "DyadicSequence":
        return cls(tuple(2**k for k in range(length)))

    @classmethod
    def for_grid(cls, grid: PeriodicGrid) -> "DyadicSequence":
        """Longest ``2**(k-1)`` sequence whose degrees fit the grid."""
        terms = [1]
        while 2 * (2 * terms[-1]) < grid.size:
            terms.append(2 * terms[-1])
        return cls(tuple(terms))

    def __len__(self) -> int:
        return len(self.terms)

    def __getitem__(self, k: int) -> int:
        """1-based access, ``seq[1] == 1``."""
        if not 1 <= k <= len(self.terms):
            raise IndexError(f"sequence index {k} outside 1..{len(self.terms)}")
        return self.terms[k - 1]

    @property
    def block_count(self) -> int:
        return len(self.terms) - 1


def vp_kernel_eval(spec: VPOperatorSpec, t) -> np.ndarray:
    """Closed-form kernel ``K_{n,p}(t)``, with the limit ``(2n+1-p)/2`` at multiples of 2*pi."""
    n, p = spec.n, spec.p
    t = np.asarray(t, dtype=np.float64)
    half = np.sin(t / 2.0)
    singular = np.abs(half) < 1e-7
    safe = np.where(singular, 1.0, half)
    out = np.sin((2 * n + 1 - p) * t / 2.0) * np.sin((p + 1) * t / 2.0) / (2.0 * (p + 1) * safe**2)
    # second-order expansion around the removable singularity
    s = np.angle(np.exp(1j * t))
    a, b = (2 * n + 1 - p) / 2.0, (p + 1) / 2.0
    limit = a * b / (2.0 * (p + 1) * 0.25) * (1.0 - (a * a + b * b - 0.5) * s * s / 6.0)
    return np.where(singular, limit, out)


def vp_multiplier(n: int, p: int | None, k) -> np.ndarray:
    """Coefficient weights of ``V_{n,p}``: 1 up to ``n - p``, then linear down to 0 past ``n``."""
    spec = VPOperatorSpec(n, p)
    k = np.abs(np.asarray(k))
    n, p = spec.n, spec.p
    return np.clip((n + 1 - k) / (p + 1), 0.0, 1.0)


def fourier_analyze(f: GridFunction, max_degree: int) -> TrigCoefficients:
    f.grid.check_degree(max_degree)
    spectrum = np.fft.fft(f.values) / f.grid.size
    k = np.arange(-max_degree, max_degree + 1)
    return TrigCoefficients(max_degree, spectrum[k % f.grid.size])


def synthesize(c: TrigCoefficients, grid: PeriodicGrid, weights=None) -> GridFunction:
    """Evaluate ``sum_k w_k c_k exp(ikt)`` on the grid (real part)."""
    grid.check_degree(c.degree)
    coeffs = c.coeffs if weights is None else c.coeffs * weights
    spectrum = np.zeros(grid.size, dtype=complex)
    spectrum[c.frequencies % grid.size] = coeffs
    return GridFunction(grid, np.fft.ifft(spectrum).real * grid.size)


def partial_sum(c: TrigCoefficients, k: int, grid: PeriodicGrid) -> GridFunction:
    if k > c.degree:
        raise ValueError(f"partial sum order {k} exceeds coefficient degree {c.degree}")
    if k < 0:
        raise ValueError("partial sum order must be nonnegative")
    weights = (np.abs(c.frequencies) <= k).astype(float)
    return synthesize(c, grid, weights)


def vp_sum(f: GridFunction, n: int, p: int | None = None, verify: bool = False) -> GridFunction:
    """Vallee-Poussin mean ``V_{n,p}[f]`` via its coefficient multiplier.

    With ``verify=True`` the result is recomputed as the average of the
    partial sums ``S_{n-p}, ..., S_n`` and the two routes must agree to 1e-10.
    """
    spec = VPOperatorSpec(n, p)
    c = fourier_analyze(f, spec.n)
    out = synthesize(c, f.grid, vp_multiplier(spec.n, spec.p, c.frequencies))
    if verify:
        other = vp_sum_by_partial_sums(f, spec.n, spec.p)
        gap = np.max(np.abs(out.values - other.values))
        if gap > 1e-10 * max(1.0, f.sup_norm()):
            raise ArithmeticError(f"multiplier and partial-sum routes disagree by {gap:.3e}")
    return out


def vp_sum_by_partial_sums(f: GridFunction, n: int, p: int | None = None) -> GridFunction:
    spec = VPOperatorSpec(n, p)
    c = fourier_analyze(f, spec.n)
    acc = np.zeros(f.grid.size)
    for k in range(spec.n - spec.p, spec.n + 1):
        acc += partial_sum(c, k, f.grid).values
    return GridFunction(f.grid, acc / (spec.p + 1))


def vp_sum_by_kernel(f: GridFunction, n: int, p: int | None = None) -> GridFunction:
    """Discrete periodic convolution with ``K_{n,p}`` normalised by ``1/pi``.

    The ``1/pi`` factor is the one that makes this agree with the averaged
    partial sums; used only in tests.
    """
    spec = VPOperatorSpec(n, p)
    f.grid.check_degree(spec.n)
    kernel = vp_kernel_eval(spec, f.grid.nodes)
    conv = np.fft.ifft(np.fft.fft(f.values) * np.fft.fft(kernel)).real
    return GridFunction(f.grid, conv * f.grid.step / np.pi)


def _check_block(seq: DyadicSequence, k: int, grid: PeriodicGrid) -> None:
    if not 1 <= k <= seq.block_count:
        raise IndexError(f"block index {k} outside 1..{seq.block_count}")
    grid.check_degree(seq[k + 1])


def block_multiplier(seq: DyadicSequence, k: int, freqs) -> np.ndarray:
    """Multiplier of ``Z_k = V_{n(k+1)} - V_{n(k)}`` (default windows)."""
    return vp_multiplier(seq[k + 1], None, freqs) - vp_multiplier(seq[k], None, freqs)


def block_component(f: GridFunction, seq: DyadicSequence, k: int) -> GridFunction:
    """``Z_k[f]`` for the 1-based block index ``k``."""
    _check_block(seq, k, f.grid)
    c = fourier_analyze(f, seq[k + 1])
    return synthesize(c, f.grid, block_multiplier(seq, k, c.frequencies))


def block_components(paths: np.ndarray, seq: DyadicSequence, k: int, grid: PeriodicGrid) -> np.ndarray:
    """``Z_k`` applied row-wise to an R x N matrix of grid values."""
    _check_block(seq, k, grid)
    spectrum = np.fft.rfft(paths, axis=-1)
    freqs = np.arange(spectrum.shape[-1])
    return np.fft.irfft(spectrum * block_multiplier(seq, k, freqs), n=grid.size, axis=-1)


def best_error_profile(f: GridFunction, max_degree: int) -> np.ndarray:
    """Upper bounds on ``E(m, f)`` for ``m = 0..max_degree``.

    Each entry is the running minimum over ``j <= m`` of the smaller of
    ``||f - S_j f||`` and ``||f - V_{j, j//2} f||``. These are bounds, not
    the minimax values.
    """
    f.grid.check_degree(max_degree)
    spectrum = np.fft.rfft(f.values)
    freqs = np.arange(spectrum.shape[-1])
    raw = np.empty(max_degree + 1)
    for m in range(max_degree + 1):
        s_m = np.fft.irfft(spectrum * (freqs <= m), n=f.grid.size)
        v_m = np.fft.irfft(spectrum * vp_multiplier(m, None, freqs), n=f.grid.size)
        raw[m] = min(np.max(np.abs(f.values - s_m)), np.max(np.abs(f.values - v_m)))
    return np.minimum.accumulate(raw)


def best_error_ub(f: GridFunction, m: int) -> float:
    return float(best_error_profile(f, m)[-1])


def modulus_of_continuity(f: GridFunction, delta: float) -> float:
    """Grid modulus ``max_{|h| <= delta} max_j |f(t_j + h) - f(t_j)|``.

    Shifts are whole grid steps, so this is a lower bound of the continuum
    modulus, short of it by at most one step's oscillation.
    """
    if not 0.0 <= delta <= 2.0 * np.pi:
        raise ValueError("delta must lie in [0, 2*pi]")
    steps = int(np.floor(delta / f.grid.step + 1e-9))
    steps = min(steps, f.grid.size // 2)
    best = 0.0
    for s in range(1, steps + 1):
        best = max(best, float(np.max(np.abs(np.roll(f.values, -s) - f.values))))
    return best
