//! Fixtures shared by the benchmarks.

use scar_core::datagen::{gen_classification, gen_corpus, gen_qp, gen_ratings};
use scar_core::{Dataset, ModelKind, SolverConfig};

/// A mid-sized dataset and solver config for `model`.
pub fn fixture(model: ModelKind) -> (Dataset, SolverConfig) {
    let data = match model {
        ModelKind::Qp => gen_qp(64, 10.0, 0),
        ModelKind::Mlr => gen_classification(2000, 50, 5, 0),
        ModelKind::Mf => gen_ratings(200, 150, 5, 0.2, 0.1, 0),
        ModelKind::Lda => gen_corpus(300, 500, 10, 50, 0),
    }
    .expect("fixture parameters are valid");
    let cfg = SolverConfig {
        model,
        ..SolverConfig::default()
    };
    (data, cfg)
}
