"""Gaussian likelihood and information-criterion helpers.

Shared by the task generator (solvability filtering) and the evaluator so
both sides apply identical arithmetic.
"""
from __future__ import annotations

import numpy as np


def gaussian_loglike(y, pred, sigmas) -> float:
    """Log-likelihood of residuals under reported per-point uncertainties."""
    y = np.asarray(y, dtype=float)
    pred = np.asarray(pred, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    r = y - pred
    return float(-0.5 * np.sum(r ** 2 / sigmas ** 2 + np.log(2.0 * np.pi * sigmas ** 2)))


def bic(loglike: float, k: int, n: int) -> float:
    return -2.0 * loglike + k * np.log(n)


def weighted_mean(y, sigmas) -> float:
    w = 1.0 / np.asarray(sigmas, dtype=float) ** 2
    return float(np.sum(w * np.asarray(y, dtype=float)) / np.sum(w))


def per_instrument_weighted_means(y, sigmas, labels) -> dict:
    """One weighted-mean constant per instrument (the null model)."""
    y = np.asarray(y, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    labels = np.asarray(labels)
    return {str(lab): weighted_mean(y[labels == lab], sigmas[labels == lab])
            for lab in dict.fromkeys(labels.tolist())}


def null_predictions(y, sigmas, labels) -> np.ndarray:
    means = per_instrument_weighted_means(y, sigmas, labels)
    return np.array([means[str(lab)] for lab in labels])


def delta_bic_vs_null(y, sigmas, labels, pred, n_planets: int) -> float:
    """BIC(null) - BIC(model) with k_model = 5*n_pl + n_inst, k_null = n_inst."""
    n = len(np.asarray(y))
    n_inst = len(dict.fromkeys(list(labels)))
    ll_model = gaussian_loglike(y, pred, sigmas)
    ll_null = gaussian_loglike(y, null_predictions(y, sigmas, labels), sigmas)
    return bic(ll_null, n_inst, n) - bic(ll_model, 5 * n_planets + n_inst, n)
