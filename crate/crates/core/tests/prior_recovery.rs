mod common;

use common::recovery::prior_recovery;

#[test]
fn flat_model_without_likelihood_recovers_prior_moments() {
    let checks = prior_recovery(11);
    assert_eq!(checks.len(), 2 * (2 + 2 * 3));
    for c in &checks {
        assert!(c.z() <= 3.0, "{c:?} z={:.2}", c.z());
    }
}
