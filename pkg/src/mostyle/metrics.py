"""Evaluation metrics: per-joint displacement locality and the Fréchet
distance between motion feature populations."""

from __future__ import annotations

import numpy as np

from .autodiff import ContractError


def msd_metric(source_world: np.ndarray, output_world: np.ndarray, height: float) -> np.ndarray:
    """Per-joint mean squared distance between world trajectories.

    Mean over frames of the squared joint displacement, divided by the squared
    skeleton height (dimensionless).
    """
    if source_world.shape != output_world.shape:
        raise ContractError(
            f"msd_metric: trajectory shapes differ {source_world.shape} vs {output_world.shape}"
        )
    diff = source_world - output_world
    sq = (diff**2).sum(axis=-1)  # (T, J)
    return sq.mean(axis=0) / (height**2)


def msd_threshold_report(msd: np.ndarray, thresholds: tuple[float, ...] = (0.1, 0.05)) -> dict[float, list[int]]:
    """Joints exceeding each threshold, largest threshold first."""
    return {thr: [int(j) for j in np.nonzero(msd > thr)[0]] for thr in sorted(thresholds, reverse=True)}


def _sym_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition; negative eigenvalues
    from roundoff are clamped to zero."""
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fmd(features_a: np.ndarray, features_b: np.ndarray) -> float:
    """Fréchet distance between Gaussians fitted to two feature populations.

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}), with the product
    square root computed as A^{1/2} S_b A^{1/2} to stay in symmetric territory.
    """
    features_a = np.asarray(features_a, dtype=np.float64)
    features_b = np.asarray(features_b, dtype=np.float64)
    if features_a.ndim != 2 or features_b.ndim != 2:
        raise ContractError("fmd: feature sets must be 2-D (n_samples, dim)")
    if features_a.shape[1] != features_b.shape[1]:
        raise ContractError(
            f"fmd: dimension mismatch {features_a.shape[1]} vs {features_b.shape[1]}"
        )
    if len(features_a) < 2 or len(features_b) < 2:
        raise ContractError("fmd: each set needs at least 2 vectors")
    mu_a = features_a.mean(axis=0)
    mu_b = features_b.mean(axis=0)
    cov_a = np.cov(features_a, rowvar=False)
    cov_b = np.cov(features_b, rowvar=False)
    cov_a = np.atleast_2d(cov_a)
    cov_b = np.atleast_2d(cov_b)

    root_a = _sym_sqrt(cov_a)
    cross = _sym_sqrt(root_a @ cov_b @ root_a)
    dist = float(((mu_a - mu_b) ** 2).sum() + np.trace(cov_a + cov_b - 2.0 * cross))
    return dist
