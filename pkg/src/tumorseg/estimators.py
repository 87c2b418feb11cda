"""scikit-learn style wrappers around the functional pipeline.

These exist for composition with sklearn tooling (get_params/set_params,
clone, pipelines operating on study objects). X here is a Study or a list
of them rather than a feature matrix, so the metaestimator utilities that
assume 2D numeric arrays do not apply; parameter management and the
fit/transform/predict calling conventions do.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin

from .configs import PipelineConfig
from .pipeline import ModelEnsemble, Study, family_probabilities, preprocess, run_study


def _as_studies(X):
    if isinstance(X, Study):
        return [X], True
    items = list(X)
    for i, s in enumerate(items):
        if not isinstance(s, Study):
            raise ValueError(f"X[{i}] is not a Study (got {type(s).__name__})")
    return items, False


class VolumePreprocessor(TransformerMixin, BaseEstimator):
    """Stateless intensity normalization: percentile clip + brain z-score.

    Parameters
    ----------
    lower_percentile, upper_percentile : float
        Clipping window applied per modality over brain voxels before
        standardization.
    """

    def __init__(self, lower_percentile=0.5, upper_percentile=99.5):
        self.lower_percentile = lower_percentile
        self.upper_percentile = upper_percentile

    def fit(self, X, y=None):
        _as_studies(X)
        return self

    def transform(self, X):
        """Map each Study to a (4, D, H, W) normalized float32 tensor."""
        studies, single = _as_studies(X)
        window = (self.lower_percentile, self.upper_percentile)
        out = [preprocess(s, clip_percentiles=window) for s in studies]
        return out[0] if single else out


class HybridSegmenter(BaseEstimator):
    """Frozen-model segmenter: predict() runs the full inference pipeline.

    Parameters
    ----------
    models : ModelEnsemble
        Patch-level callables per family. Training happens elsewhere;
        fit() only checks the ensemble is usable and marks the estimator
        fitted.
    config : PipelineConfig, optional
        Tiling, flip averaging and labeling parameters.
    """

    def __init__(self, models=None, config=None):
        self.models = models
        self.config = config

    def _resolved(self):
        if not isinstance(self.models, ModelEnsemble):
            raise ValueError("models must be a ModelEnsemble; construct one before fitting")
        return self.models, (self.config or PipelineConfig())

    def fit(self, X=None, y=None):
        self._resolved()
        self.n_models_ = len(self.models.single) + len(self.models.cascade)
        return self

    def predict(self, X):
        """Label maps (uint8, study frame) for a Study or a list of them."""
        models, config = self._resolved()
        studies, single = _as_studies(X)
        out = [run_study(s, models, config) for s in studies]
        return out[0] if single else out

    def predict_proba(self, X):
        """Per-family region probabilities in the study frame, as dicts."""
        models, config = self._resolved()
        studies, single = _as_studies(X)
        out = []
        for s in studies:
            volume = preprocess(s, clip_percentiles=config.clip_percentiles)
            out.append(family_probabilities(volume, models, config))
        return out[0] if single else out
