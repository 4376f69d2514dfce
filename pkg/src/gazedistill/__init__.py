"""gazedistill: optimize a gaze-regression teacher on synthetic + unlabeled
real eye images, then distill it into a tiny on-device student, with a full
percentile-based evaluation protocol on procedurally generated data."""

__version__ = "0.1.0"
