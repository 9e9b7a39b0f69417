//! Cross-module invariants checked on random inputs.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use nilspec::acceptance::{mutate, random_expression};
use nilspec::algebra::GradedNilpotentAlgebra;
use nilspec::ball::BallMask;
use nilspec::config::RunConfig;
use nilspec::expr::parse;
use nilspec::grid::BoxGrid;
use nilspec::oracles::reference_eval;
use nilspec::report;
use nilspec::subriemannian::{albanese_norm, cc_distance_field, CCField};
use nilspec::volume::{haar_volume, weighted_volume};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64) -> bool {
    if a.is_nan() || b.is_nan() {
        return a.is_nan() && b.is_nan();
    }
    if a.is_infinite() || b.is_infinite() {
        return a == b;
    }
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn parser_agrees_with_reference_interpreter(
        seed in any::<u64>(),
        x in proptest::collection::vec(-2.0f64..2.0, 3),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = random_expression(&mut rng, 4, 3);
        let expr = parse(&text, 3).map_err(|e| TestCaseError::fail(format!("{text}: {e}")))?;
        let ours = expr.eval(&x);
        let theirs = reference_eval(&text, &x);
        match (ours, theirs) {
            (Ok(a), Ok(b)) => prop_assert!(close(a, b), "{text}: {a} vs {b}"),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{text}: {a:?} vs {b:?}"),
        }
        // The printed form is a fixed point of parse-then-print.
        let printed = expr.to_string();
        let again = parse(&printed, 3).map_err(|e| TestCaseError::fail(format!("{printed}: {e}")))?;
        prop_assert_eq!(again.to_string(), printed);
    }

    #[test]
    fn corrupted_input_is_rejected_or_agrees(seed in any::<u64>(), x in proptest::collection::vec(-2.0f64..2.0, 3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clean = random_expression(&mut rng, 3, 3);
        let text = mutate(&mut rng, &clean);
        // Anything the parser accepts must evaluate exactly as the reference does.
        if let Ok(e) = parse(&text, 3) {
            match (e.eval(&x), reference_eval(&text, &x)) {
                (Ok(a), Ok(b)) => prop_assert!(close(a, b), "{text}: {a} vs {b}"),
                (Err(_), Err(_)) => {}
                (a, b) => prop_assert!(false, "{text}: {a:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn report_floats_round_trip(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        let text = report::to_json(&serde_json::json!({"v": v, "row": [v, -v]})).unwrap();
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back["v"].as_f64().unwrap().to_bits(), v.to_bits());
        prop_assert_eq!(back["row"][1].as_f64().unwrap(), -v);
    }

    #[test]
    fn volume_brackets_are_ordered(
        bits in proptest::collection::vec(any::<bool>(), 7 * 6),
        extra in proptest::collection::vec(any::<bool>(), 7 * 6),
        scale in 0.1f64..3.0,
    ) {
        let grid = BoxGrid::new(vec![-0.3, -0.25], vec![0.1, 0.1], vec![7, 6]).unwrap();
        let small = BallMask { grid: grid.clone(), inside: bits.clone() };
        let large = BallMask { grid, inside: bits.iter().zip(&extra).map(|(a, b)| *a || *b).collect() };
        let w = weighted_volume(&small, |x| Ok(scale * (1.5 + x[0]))).unwrap();
        prop_assert!(w.low <= w.volume && w.volume <= w.high);
        let (a, b) = (haar_volume(&small), haar_volume(&large));
        prop_assert!(a.volume <= b.volume && a.low <= b.low && a.high <= b.high);
        prop_assert!((a.volume - small.count() as f64 * 0.01).abs() < 1e-12);
    }

    #[test]
    fn config_round_trips_through_json(seed in any::<u64>(), k in 1usize..=16, rho in 1.0f64..8.0) {
        let text = format!(
            r#"{{"algebra": "heisenberg:3", "metric": {{"kind": "left_invariant", "Q": [[2, 0.5, 0], [0.5, 1, 0], [0, 0, 1]]}},
                "rho": [{rho}, {}, {}], "k": {k}, "seed": {seed}}}"#,
            rho + 1.0,
            rho + 2.5
        );
        let c = RunConfig::from_json(&text).unwrap();
        let back = RunConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.seed, seed);
    }
}

fn h3_cc() -> &'static CCField {
    static FIELD: OnceLock<CCField> = OnceLock::new();
    FIELD.get_or_init(|| {
        let h3 = GradedNilpotentAlgebra::heisenberg(3).unwrap();
        let norm = albanese_norm(&DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.8])).unwrap();
        cc_distance_field(&norm, &h3, 1.0 / 16.0).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// `d(δ_t x) = t d(x)` for the CC distance, up to lattice error.
    #[test]
    fn cc_distance_is_homogeneous(
        theta in 0.0f64..std::f64::consts::TAU,
        z in -0.12f64..0.12,
        r in 0.5f64..0.8,
        t in 1.1f64..1.6,
    ) {
        let h3 = GradedNilpotentAlgebra::heisenberg(3).unwrap();
        let cc = h3_cc();
        let x = [r * theta.cos() / t, r * theta.sin() / t, z / (t * t)];
        let d = cc.distance(&x);
        prop_assume!(d.is_finite() && t * d < 0.95);
        let dt = cc.distance(&h3.dilate(t, &x).unwrap());
        prop_assert!((dt - t * d).abs() <= 0.05 * t * d + 0.02, "d = {d}, d(δx) = {dt}, t = {t}");
    }
}
