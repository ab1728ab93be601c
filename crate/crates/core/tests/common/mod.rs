#![allow(dead_code)]

use biasaudit::synth::{
    CovariateSpec, Injection, Mechanism, OutcomeModel, ProtectedSpec, ScoreModel, SynthConfig,
};

/// Two-level `sex` attribute, one Gaussian predictor, oracle-noise scores.
pub fn two_group(n: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        n,
        seed,
        protected: vec![ProtectedSpec::new("sex", &[("F", 0.5), ("M", 0.5)])],
        covariates: vec![CovariateSpec::gaussian("x", 0.0, 1.0)],
        outcome: OutcomeModel {
            intercept: -1.0,
            ..Default::default()
        }
        .with_coefficient("x", 1.5),
        score: ScoreModel::oracle(0.05),
        injections: Vec::new(),
    }
}

pub fn with_noise_on_f(mut c: SynthConfig, sd: f64) -> SynthConfig {
    c.injections
        .push(Injection::new("sex", "F", Mechanism::ExtraNoise { sd }));
    c
}

/// `grp` with a minority level `A` whose members have `x` shifted by
/// `effect` standard deviations.
pub fn confounded(n: usize, seed: u64, effect: f64) -> SynthConfig {
    SynthConfig {
        n,
        seed,
        protected: vec![ProtectedSpec::new("grp", &[("A", 0.3), ("B", 0.7)])],
        covariates: vec![CovariateSpec::gaussian("x", 0.0, 1.0).depends_on("grp", "A", effect)],
        outcome: OutcomeModel::default().with_coefficient("x", 1.0),
        score: ScoreModel::oracle(0.05),
        injections: Vec::new(),
    }
}
