//! Executable checks of the feature-level theory: closed-form risk
//! minimizers, convergence of label sample means, approximation of feature
//! label distributions, and the scaling of the approximation-error bounds.

mod bounds;
mod lemmas;
mod sweep;

pub use bounds::{bound_terms, BoundInputs, BoundTerms};
pub use lemmas::{
    chebyshev_envelope, feature_minimizer, feature_stats, fit_loglog_slope, lemma2_deviation, lemma3_sweep,
    regrouped_risk, verify_lemma1, verify_lemma1_with, verify_lemma2, verify_lemma3, FeatureMinimizer,
    FeatureStat, Lemma1Config, Lemma1Report, Lemma2Point, Lemma2Report, Lemma3Point, Lemma3Report,
};
pub use sweep::{theorem_sweep, PartialSweep, ScalingCurve, SweepBase, SweepParameter, SweepRow, TheoremSweepConfig};
