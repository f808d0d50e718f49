"""Guidance losses, the staged objective, and closed-form gradients.

Three terms drive the guidance:

* alignment: sum_i d_i * (1 - f_i)^2, where f_i = e_in / (e_in + e_out + eps)
  is the fraction of object i's attention energy inside its box mask;
* orthogonality: sum over occlusion pairs (i fg, j bg) of
  lambda_ij * I_{i<-j}, with interference I = sum(A_j * M_i) / (sum(M_i) + eps)
  and depth-aware weight lambda_ij = lambda0 * exp(alpha * (d_j - d_i) / tau);
* compactness: sum_i d_i * Var_i, the second spatial moment of the
  probability-normalized map around its attention-weighted mean.

Stage 1 optimizes all three (orthogonality and compactness scaled by their
config weights); stage 2 drops the orthogonality term from the total and the
gradient but still reports it diagnostically.

Gradients are hand-derived closed forms rather than autodiff, so the
finite-difference suite is a genuinely independent check.  The derivations
live in the docstrings of the private kernels below.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .attention import AttentionField, check_alignment, coord_grid
from .scene import OcclusionPair, SceneSpec, scene_masks


class ConfigError(ValueError):
    """Raised for invalid guidance configuration values."""


@dataclass(frozen=True)
class GuidanceConfig:
    """Every tunable of the guidance engine.

    The default step size is calibrated for the raster surrogate, whose
    gradient entries scale like 1/(total attention mass); see the README for
    blob-mode guidance.
    """

    lambda0: float = 0.5
    alpha: float = 1.0
    tau: float = 1.0
    lambda_ortho: float = 0.5
    lambda_compact: float = 0.2
    epsilon: float = 1e-8
    eta0: float = 800.0
    eta_decay: float = 1.0
    stage1_fraction: float = 0.5
    total_steps: int = 200

    def __post_init__(self) -> None:
        if not self.lambda0 > 0:
            raise ConfigError(f"lambda0 must be > 0, got {self.lambda0}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0.0 <= self.stage1_fraction <= 1.0:
            raise ConfigError(
                f"stage1_fraction must be within [0, 1], got {self.stage1_fraction}"
            )
        if not self.eta0 >= 0:
            raise ConfigError(f"eta0 must be >= 0, got {self.eta0}")
        if not 0.0 < self.eta_decay <= 1.0:
            raise ConfigError(f"eta_decay must be in (0, 1], got {self.eta_decay}")
        if not self.total_steps >= 0:
            raise ConfigError(f"total_steps must be >= 0, got {self.total_steps}")

    @classmethod
    def preset(cls, name: str) -> "GuidanceConfig":
        """Named weight presets: "main" (0.5/0.2) or "appendix" (0.2/0.5)."""
        if name == "main":
            return cls()
        if name == "appendix":
            return cls(lambda_ortho=0.2, lambda_compact=0.5)
        raise ConfigError(f"unknown preset {name!r} (expected 'main' or 'appendix')")

    def updated(self, **overrides) -> "GuidanceConfig":
        return replace(self, **overrides)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term loss values with the diagnostics every term is built from."""

    stage: int
    align: float
    ortho: float
    compact: float
    total: float
    f: np.ndarray          # (K,) alignment ratios
    e_in: np.ndarray       # (K,) in-box energies
    e_out: np.ndarray      # (K,) out-of-box energies
    mu: np.ndarray         # (K, 2) spatial means (x, y)
    var: np.ndarray        # (K,) spatial second moments
    pairs: tuple[OcclusionPair, ...]
    pair_interference: np.ndarray  # (P,) I values
    pair_weights: np.ndarray       # (P,) lambda_ij values

    def mean_interference(self) -> float | None:
        if len(self.pair_interference) == 0:
            return None
        return float(np.mean(self.pair_interference))

    def mean_var(self) -> float:
        return float(np.mean(self.var))


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------

def attention_energies(values: np.ndarray, mask: np.ndarray):
    """In-box and out-of-box attention energies of one map.

    The dominant side keeps its literal sum; the other is derived from the
    total.  Whenever the dominant side holds at least half the mass the
    subtraction is exact (Sterbenz), so e_in + e_out equals the map's total
    bit-exactly instead of merely to rounding error.
    """
    a = np.asarray(values)
    m = np.asarray(mask)
    if a.shape != m.shape:
        raise ValueError(f"map shape {a.shape} != mask shape {m.shape}")
    total = a.sum()
    e_in = (a * m).sum()
    e_out = (a * (1.0 - m)).sum()
    if e_in >= e_out:
        if e_in >= total / 2:
            e_out = total - e_in
    elif e_out >= total / 2:
        e_in = total - e_out
    return e_in, e_out


def alignment_ratio(e_in, e_out, epsilon):
    """Concentration of attention inside the box: e_in / (e_in + e_out + eps)."""
    return e_in / (e_in + e_out + epsilon)


def interference(values_bg: np.ndarray, mask_fg: np.ndarray, epsilon):
    """Mean background attention per foreground-mask pixel."""
    a = np.asarray(values_bg)
    m = np.asarray(mask_fg)
    if a.shape != m.shape:
        raise ValueError(f"map shape {a.shape} != mask shape {m.shape}")
    return (a * m).sum() / (m.sum() + epsilon)


def arbitration_weight(d_fg: float, d_bg: float, cfg: GuidanceConfig) -> float:
    """Depth-aware pair weight lambda0 * exp(alpha * (d_bg - d_fg) / tau)."""
    return cfg.lambda0 * math.exp(cfg.alpha * (d_bg - d_fg) / cfg.tau)


def spatial_mean(norm_map: np.ndarray, coords) -> tuple[float, float]:
    """Attention-weighted expectation of the pixel-center coordinates."""
    a = np.asarray(norm_map)
    return (a * coords.x).sum(), (a * coords.y).sum()


def spatial_variance(norm_map: np.ndarray, coords, mu) -> float:
    """Attention-weighted second moment around the given mean."""
    a = np.asarray(norm_map)
    mu_x, mu_y = mu
    dist2 = (coords.x - mu_x) ** 2 + (coords.y - mu_y) ** 2
    return (a * dist2).sum()


def staged_total(align, ortho, compact, cfg: GuidanceConfig, stage: int):
    """Combine term values into the stage objective; stage 2 drops ortho."""
    if stage == 1:
        return align + cfg.lambda_ortho * ortho + cfg.lambda_compact * compact
    if stage == 2:
        return align + cfg.lambda_compact * compact
    raise ValueError(f"stage must be 1 or 2, got {stage}")


# ---------------------------------------------------------------------------
# dtype-generic term kernels (shared by the public losses and the
# finite-difference oracle, which feeds them extended-precision arrays)
# ---------------------------------------------------------------------------

def _align_terms(maps: np.ndarray, masks: np.ndarray, depths: np.ndarray, epsilon):
    k = maps.shape[0]
    dtype = maps.dtype
    f = np.zeros(k, dtype=dtype)
    e_in = np.zeros(k, dtype=dtype)
    e_out = np.zeros(k, dtype=dtype)
    value = dtype.type(0.0)
    for i in range(k):
        e_in[i], e_out[i] = attention_energies(maps[i], masks[i])
        f[i] = alignment_ratio(e_in[i], e_out[i], epsilon)
        value = value + depths[i] * (1 - f[i]) ** 2
    return value, f, e_in, e_out


def _ortho_terms(
    maps: np.ndarray,
    masks: np.ndarray,
    depths: np.ndarray,
    pair_idx: Sequence[tuple[int, int]],
    cfg: GuidanceConfig,
):
    dtype = maps.dtype
    n = len(pair_idx)
    inter = np.zeros(n, dtype=dtype)
    weights = np.zeros(n, dtype=np.float64)
    value = dtype.type(0.0)
    for p, (fg, bg) in enumerate(pair_idx):
        weights[p] = cfg.lambda0 * math.exp(
            cfg.alpha * (float(depths[bg]) - float(depths[fg])) / cfg.tau
        )
        inter[p] = interference(maps[bg], masks[fg], cfg.epsilon)
        value = value + weights[p] * inter[p]
    return value, inter, weights


def _compact_terms(maps: np.ndarray, coords, depths: np.ndarray, epsilon):
    k = maps.shape[0]
    dtype = maps.dtype
    mu = np.zeros((k, 2), dtype=dtype)
    var = np.zeros(k, dtype=dtype)
    value = dtype.type(0.0)
    for i in range(k):
        norm = maps[i] / (maps[i].sum() + epsilon)
        mu[i] = spatial_mean(norm, coords)
        var[i] = spatial_variance(norm, coords, mu[i])
        value = value + depths[i] * var[i]
    return value, mu, var


# ---------------------------------------------------------------------------
# public losses
# ---------------------------------------------------------------------------

def _resolve_pairs(scene: SceneSpec, pairs: Sequence[OcclusionPair]) -> list[tuple[int, int]]:
    return [(scene.index_of(p.foreground_id), scene.index_of(p.background_id)) for p in pairs]


def loss_align(field: AttentionField, scene: SceneSpec, cfg: GuidanceConfig):
    """Depth-weighted alignment loss and the per-object ratios behind it."""
    check_alignment(field, scene)
    value, f, _, _ = _align_terms(field.maps, scene_masks(scene), scene.depths(), cfg.epsilon)
    return float(value), f


def loss_ortho(
    field: AttentionField,
    scene: SceneSpec,
    pairs: Sequence[OcclusionPair],
    cfg: GuidanceConfig,
):
    """Weighted interference over occlusion pairs (0 for no pairs)."""
    check_alignment(field, scene)
    value, inter, weights = _ortho_terms(
        field.maps, scene_masks(scene), scene.depths(), _resolve_pairs(scene, pairs), cfg
    )
    return float(value), inter, weights


def loss_compact(field: AttentionField, scene: SceneSpec, cfg: GuidanceConfig):
    """Depth-weighted spatial variance with per-object means and moments."""
    check_alignment(field, scene)
    coords = coord_grid(scene.grid_height, scene.grid_width)
    value, mu, var = _compact_terms(field.maps, coords, scene.depths(), cfg.epsilon)
    return float(value), mu, var


def staged_loss(
    field: AttentionField,
    scene: SceneSpec,
    pairs: Sequence[OcclusionPair],
    cfg: GuidanceConfig,
    stage: int,
) -> LossBreakdown:
    """Full stage objective with diagnostics.

    The ortho term is always evaluated and reported; in stage 2 it is simply
    excluded from the total (and from the gradient).
    """
    if stage not in (1, 2):
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    check_alignment(field, scene)
    masks = scene_masks(scene)
    depths = scene.depths()
    coords = coord_grid(scene.grid_height, scene.grid_width)
    pair_idx = _resolve_pairs(scene, pairs)

    align, f, e_in, e_out = _align_terms(field.maps, masks, depths, cfg.epsilon)
    ortho, inter, weights = _ortho_terms(field.maps, masks, depths, pair_idx, cfg)
    compact, mu, var = _compact_terms(field.maps, coords, depths, cfg.epsilon)
    total = staged_total(align, ortho, compact, cfg, stage)
    return LossBreakdown(
        stage=stage,
        align=float(align),
        ortho=float(ortho),
        compact=float(compact),
        total=float(total),
        f=f,
        e_in=e_in,
        e_out=e_out,
        mu=mu,
        var=var,
        pairs=tuple(pairs),
        pair_interference=inter,
        pair_weights=weights,
    )


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def _grad_align(maps: np.ndarray, masks: np.ndarray, depths: np.ndarray, epsilon) -> np.ndarray:
    """d(align)/dA by the quotient rule.

    With S = e_in + e_out and f = e_in / (S + eps):
        df/dA(v) = (M(v) - f) / (S + eps)
        d[d_i (1 - f)^2]/dA(v) = -2 d_i (1 - f) (M(v) - f) / (S + eps)
    """
    g = np.zeros_like(maps)
    for i in range(maps.shape[0]):
        e_in, e_out = attention_energies(maps[i], masks[i])
        denom = e_in + e_out + epsilon
        f = e_in / denom
        g[i] = -2.0 * depths[i] * (1.0 - f) * (masks[i] - f) / denom
    return g


def _grad_ortho(
    maps: np.ndarray,
    masks: np.ndarray,
    depths: np.ndarray,
    pair_idx: Sequence[tuple[int, int]],
    cfg: GuidanceConfig,
) -> np.ndarray:
    """d(sum lambda_ij * I)/dA: I is linear in the background map.

    dI/dA_bg(v) = M_fg(v) / (sum M_fg + eps); foreground maps get nothing
    because I touches them only through the constant mask.
    """
    g = np.zeros_like(maps)
    for fg, bg in pair_idx:
        lam = cfg.lambda0 * math.exp(
            cfg.alpha * (float(depths[bg]) - float(depths[fg])) / cfg.tau
        )
        g[bg] += lam * masks[fg] / (masks[fg].sum() + cfg.epsilon)
    return g


def _grad_compact(maps: np.ndarray, coords, depths: np.ndarray, epsilon) -> np.ndarray:
    """d(sum_i d_i Var_i)/dA via the weighted-moment derivative identity.

    For any fixed per-pixel quantity g, G = sum(A_tilde * g) has
        dG/dA(v) = (g(v) - G) / (S + eps).
    Applying it to Var = sum(A_tilde * ||p - mu||^2) and chaining through mu
    (d(mu)/dA(v) = (p(v) - mu) / (S + eps)) gives
        dVar/dA(v) = (||p(v) - mu||^2 - Var) / (S + eps)
                     - 2 (p(v) - mu) . (mu - mu * sum(A_tilde)) / (S + eps).
    Since sum(A_tilde) = S / (S + eps), the second factor collapses to
    mu * eps / (S + eps): an eps-order residual of the normalization, kept so
    the gradient matches finite differences at full precision.
    """
    g = np.zeros_like(maps)
    for i in range(maps.shape[0]):
        s = maps[i].sum()
        denom = s + epsilon
        norm = maps[i] / denom
        mu_x = (norm * coords.x).sum()
        mu_y = (norm * coords.y).sum()
        dx = coords.x - mu_x
        dy = coords.y - mu_y
        dist2 = dx**2 + dy**2
        var = (norm * dist2).sum()
        residual = (dx * mu_x + dy * mu_y) * (2.0 * epsilon / denom**2)
        g[i] = depths[i] * ((dist2 - var) / denom - residual)
    return g


def grad_staged_loss(
    field: AttentionField,
    scene: SceneSpec,
    pairs: Sequence[OcclusionPair],
    cfg: GuidanceConfig,
    stage: int,
) -> np.ndarray:
    """Analytic d(total)/dA for every map entry, shape (K, H, W).

    Matches central finite differences of staged_loss; the ortho component is
    identically absent in stage 2.
    """
    if stage not in (1, 2):
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    check_alignment(field, scene)
    masks = scene_masks(scene)
    depths = scene.depths()
    coords = coord_grid(scene.grid_height, scene.grid_width)
    g = _grad_align(field.maps, masks, depths, cfg.epsilon)
    if stage == 1:
        g += cfg.lambda_ortho * _grad_ortho(
            field.maps, masks, depths, _resolve_pairs(scene, pairs), cfg
        )
    g += cfg.lambda_compact * _grad_compact(field.maps, coords, depths, cfg.epsilon)
    return g
