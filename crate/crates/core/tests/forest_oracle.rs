mod split_oracle;

use lifespan_core::forest::Response;
use proptest::prelude::*;

fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<u32>, Vec<f64>)> {
    (2usize..=12, 1usize..=4).prop_flat_map(|(n, f)| {
        (
            proptest::collection::vec(proptest::collection::vec(0i32..8, n), f).prop_map(|cols| {
                cols.into_iter()
                    .map(|c| c.into_iter().map(|v| v as f64 * 0.5).collect())
                    .collect()
            }),
            proptest::collection::vec(0u32..3, n),
            proptest::collection::vec(-5.0f64..5.0, n),
        )
    })
}

fn check(cols: &[Vec<f64>], ys: &[f64], response: Response<'_>, classification: bool) -> Result<(), TestCaseError> {
    if let Some(msg) = split_oracle::disagreement(cols, ys, response, classification) {
        return Err(TestCaseError::fail(msg));
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn gini_split_matches_exhaustive_search((cols, labels, _) in instance()) {
        let ys: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        check(&cols, &ys, Response::Classes { labels: &labels, n_classes: 3 }, true)?;
    }

    #[test]
    fn variance_split_matches_exhaustive_search((cols, _, ys) in instance()) {
        check(&cols, &ys, Response::Values(&ys), false)?;
    }
}
