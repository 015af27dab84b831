"""Sharp regression-discontinuity fits on a fixed window.

The design has a global intercept, so the coefficient on ``treated`` is the
jump at the cutoff::

    y = tau * T + sum_p b_p (r - c)**p + sum_{p>=1} a_p (r - c)**p * T + e

Column order is ``[treated, below_p0 .. below_pP, above_p1 .. above_pP]``
where ``below_p0`` is the intercept (one for every row) and ``below_pk`` for
k >= 1 is only non-zero on the untreated side.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, check_array

from .model import (
    GROUPS,
    EffectTable,
    EstimationError,
    InsufficientDataError,
    RdFit,
    RdSpec,
    RecordsLike,
    Sample,
    SingularDesignError,
    as_sample,
    stratum_label,
    stratum_mask,
)

RANK_TOL = 1e-10


def design_matrix(running, spec: RdSpec):
    """Design rows for raw running values (no filtering)."""
    running = np.asarray(running, dtype=np.int64)
    centered = (running - spec.cutoff).astype(float)
    treated = spec.treated(running).astype(float)
    untreated = 1.0 - treated
    p = spec.poly_order
    cols = [treated, np.ones_like(centered)]
    cols += [centered**k * untreated for k in range(1, p + 1)]
    cols += [centered**k * treated for k in range(1, p + 1)]
    return np.column_stack(cols)


def _fit_rows(sample: Sample, spec: RdSpec, mask: Optional[np.ndarray] = None):
    keep = spec.in_window(sample.running) & spec.keep_mask(sample.running)
    if mask is not None:
        keep &= mask
    return np.flatnonzero(keep)


def build_design(records: RecordsLike, spec: RdSpec, stratum=()):
    """Return ``(X, y, w)`` for the records of one stratum.

    Rows outside the window or inside the donut are dropped first.  Weights
    are all ones when ``spec.weighted`` is False.
    """
    sample = as_sample(records)
    rows = _fit_rows(sample, spec)
    if rows.size == 0:
        raise InsufficientDataError(f"no records in stratum {stratum_label(stratum)}")
    X = design_matrix(sample.running[rows], spec)
    y = sample.outcome[rows]
    w = sample.weight[rows] if spec.weighted else np.ones(rows.size)
    return X, y, w


def _check_support(running, spec: RdSpec, stratum):
    need = spec.poly_order + 1
    treated = spec.treated(running)
    for side, sel in (("below", ~treated), ("above", treated)):
        n_distinct = np.unique(running[sel]).size
        if n_distinct < need:
            raise InsufficientDataError(
                f"{stratum_label(stratum)}: {n_distinct} distinct running values "
                f"{side} the cutoff, need {need}"
            )


def wls_qr(X, y, w, names: Optional[Sequence[str]] = None):
    """Weighted least squares through a QR factorization of ``sqrt(w) X``.

    Returns ``(coef, weighted_residuals)``.  Raises SingularDesignError when
    a diagonal entry of R is negligible, naming those columns.
    """
    w = np.asarray(w, dtype=float)
    sw = np.sqrt(w / w.mean())
    A = X * sw[:, None]
    b = y * sw
    Q, R = np.linalg.qr(A, mode="reduced")
    diag = np.abs(np.diag(R))
    scale = diag.max() if diag.size else 0.0
    bad = np.flatnonzero(diag <= RANK_TOL * scale)
    if scale == 0.0 or bad.size:
        names = names or [f"x{j}" for j in range(X.shape[1])]
        cols = [names[j] for j in bad]
        raise SingularDesignError(
            f"rank-deficient design; dependent columns: {', '.join(cols)}", cols
        )
    coef = solve_triangular(R, Q.T @ b)
    return coef, b - A @ coef


def fit_rd(records: RecordsLike, spec: RdSpec, stratum=()) -> RdFit:
    """Fit the piecewise polynomial and return the discontinuity at the cutoff."""
    sample = as_sample(records)
    return _fit_sample(sample, spec, stratum, None)


def _fit_sample(sample: Sample, spec: RdSpec, stratum, mask) -> RdFit:
    rows = _fit_rows(sample, spec, mask)
    if rows.size == 0:
        raise InsufficientDataError(f"no records in stratum {stratum_label(stratum)}")
    running = sample.running[rows]
    _check_support(running, spec, stratum)
    X = design_matrix(running, spec)
    w = sample.weight[rows] if spec.weighted else np.ones(rows.size)
    y = sample.outcome[rows]
    # the intercept absorbs the shift; a constant response then solves exactly
    shift = y[0]
    try:
        coef, resid = wls_qr(X, y - shift, w, spec.column_names)
    except SingularDesignError as exc:
        raise SingularDesignError(f"{stratum_label(stratum)}: {exc}", exc.columns) from None
    coef[1] += shift
    p = spec.poly_order
    tau = float(coef[0])
    below = tuple(float(c) for c in coef[1 : p + 2])
    above = (below[0] + tau,) + tuple(float(c) for c in coef[p + 2 :])
    treated = spec.treated(running)
    dof = max(rows.size - X.shape[1], 1)
    return RdFit(
        tau_hat=tau,
        below_coeffs=below,
        above_coeffs=above,
        n_below=int((~treated).sum()),
        n_above=int(treated.sum()),
        residual_variance=float(resid @ resid / dof),
        stratum=tuple(stratum),
    )


def fit_rd_lattice(records: RecordsLike, spec: RdSpec) -> EffectTable:
    """Fit overall, per-group and per-(group, cell) strata.

    A failing group-by-cell stratum is recorded in ``missing``; a failing
    overall or per-group fit raises.
    """
    sample = as_sample(records)
    overall = _fit_sample(sample, spec, (), None)
    by_group = {w: _fit_sample(sample, spec, (w,), sample.group == w) for w in GROUPS}
    by_cell, missing = {}, {}
    for w in GROUPS:
        for x in sample.cells:
            key = (w, x)
            try:
                by_cell[key] = _fit_sample(sample, spec, key, stratum_mask(sample, key))
            except EstimationError as exc:
                missing[key] = str(exc)
    return EffectTable(
        overall=overall,
        by_group=by_group,
        by_group_cell=by_cell,
        cells=sample.cells,
        missing=missing,
    )


class RDRegressor(BaseEstimator, RegressorMixin):
    """Scikit-learn style wrapper around :func:`fit_rd`.

    ``X`` is a single column holding the running variable.  After ``fit``,
    ``tau_`` is the estimated jump and ``coef_`` the full coefficient vector
    in the documented column order.

    Examples
    --------
    >>> import numpy as np
    >>> age = np.arange(51, 80)
    >>> y = np.where(age > 65, 1.0 + 0.1 * (age - 65), 2.0 + 0.5 * (age - 65))
    >>> round(RDRegressor().fit(age[:, None], y).tau_, 10)
    -1.0
    """

    def __init__(self, cutoff=65, window=(51, 79), poly_order=1,
                 treated_side="gt", donut=0):
        self.cutoff = cutoff
        self.window = window
        self.poly_order = poly_order
        self.treated_side = treated_side
        self.donut = donut

    def _spec(self, weighted):
        return RdSpec(
            cutoff=self.cutoff,
            window=tuple(self.window),
            poly_order=self.poly_order,
            treated_side=self.treated_side,
            donut=self.donut,
            weighted=weighted,
        )

    def fit(self, X, y, sample_weight=None):
        X, y = check_X_y(X, y, y_numeric=True)
        if X.shape[1] != 1:
            raise ValueError("X must have exactly one column (the running variable)")
        running = X[:, 0]
        if not np.all(running == np.round(running)):
            raise ValueError("running variable must be integer-valued")
        weight = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, float)
        if np.any(weight <= 0):
            raise ValueError("sample_weight must be positive")
        n = len(y)
        sample = Sample(
            outcome=np.asarray(y, dtype=float),
            group=np.zeros(n, dtype=np.int64),
            cell=np.zeros(n, dtype=np.int64),
            running=running.astype(np.int64),
            location=np.zeros(n, dtype=np.int64),
            weight=weight,
            cells=("all",),
        )
        self.spec_ = self._spec(sample_weight is not None)
        self.fit_ = fit_rd(sample, self.spec_)
        self.tau_ = self.fit_.tau_hat
        self.coef_ = np.concatenate(
            [[self.tau_], self.fit_.below_coeffs, self.fit_.above_coeffs[1:]]
        )
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        X = check_array(X)
        running = X[:, 0]
        return self.fit_.predict(running, self.cutoff, self.spec_.treated(running))
