use cascade_core::agent::{decide, posterior, History, Signal};
use cascade_core::sweep::{read_table, write_table, SweepRow, TableFormat};
use cascade_core::walk::{classify, exact_interval, step};
use cascade_core::{CascadeKind, ModelParams, Obs, Value, WalkState};
use proptest::prelude::*;

fn model() -> impl Strategy<Value = ModelParams> {
    (0.51f64..0.95, 0.0f64..0.45, 0.0f64..0.45).prop_map(|(p, e, b)| ModelParams::new(p, e, b).unwrap())
}

fn observations(max: usize) -> impl Strategy<Value = Vec<Obs>> {
    prop::collection::vec(prop_oneof![Just(Obs::Y), Just(Obs::N)], 0..max)
}

fn value() -> impl Strategy<Value = Value> {
    prop_oneof![Just(Value::Good), Just(Value::Bad)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn position_matches_counts(m in model(), obs in observations(60)) {
        let d = m.derive();
        let mut s = WalkState::origin(&d);
        for o in obs {
            if classify(&s) != CascadeKind::Undecided {
                break;
            }
            s = step(s, o);
            let direct = s.n_y as f64 * d.eta_y - s.n_n as f64 * d.eta_n;
            prop_assert_eq!(s.h(), direct);
        }
    }

    #[test]
    fn interval_conserves_mass(m in model(), v in value(), depth in 1usize..400) {
        let iv = exact_interval(&m, v, depth);
        prop_assert!(0.0 <= iv.y_lower && iv.y_lower <= iv.y_upper && iv.y_upper <= 1.0 + 1e-12);
        prop_assert!((iv.y_lower + iv.n_mass + iv.pending - 1.0).abs() < 1e-12);
        prop_assert!((iv.y_upper - iv.y_lower - iv.pending).abs() < 1e-15);
    }

    #[test]
    fn deeper_intervals_nest(m in model(), v in value(), depth in 1usize..200) {
        let a = exact_interval(&m, v, depth);
        let b = exact_interval(&m, v, depth + 7);
        prop_assert!(b.y_lower >= a.y_lower - 1e-12);
        prop_assert!(b.y_upper <= a.y_upper + 1e-12);
    }

    #[test]
    fn belief_is_consistent(m in model(), obs in observations(20)) {
        let history = History::from(obs);
        for s in Signal::BOTH {
            let b = posterior(&history, s, &m);
            prop_assert!((b.posterior_g - 1.0 / (1.0 + b.private_lr * b.public_lr)).abs() < 1e-12);
            let alpha = m.p() / (1.0 - m.p());
            let expected = if s == Signal::H { 1.0 / alpha } else { alpha };
            prop_assert!((b.private_lr - expected).abs() < 1e-12);
            let a = decide(&b, s);
            if (b.posterior_g - 0.5).abs() > 1e-12 {
                prop_assert_eq!(a == Obs::Y, b.posterior_g > 0.5);
            } else {
                prop_assert_eq!(a, s.follow());
            }
        }
    }

    #[test]
    fn tables_round_trip(values in prop::collection::vec((0.0f64..1.0, prop::option::of(-1e3f64..1e3), prop::option::of(any::<u64>())), 0..20)) {
        let rows: Vec<SweepRow> = values
            .into_iter()
            .map(|(eps, value, seed)| SweepRow {
                eps,
                beta: 0.1,
                p: 0.7,
                v: Value::Bad,
                method: cascade_core::sweep::Method::Mc,
                value,
                lower: None,
                upper: value.map(|x| x + 1.0),
                std_err: value.map(f64::abs),
                trials: seed.map(|s| s % 1000),
                seed,
                error: None,
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        for format in [TableFormat::Csv, TableFormat::Json] {
            let path = dir.path().join("rows");
            write_table(&rows, format, &path).unwrap();
            prop_assert_eq!(&read_table(format, &path).unwrap(), &rows);
        }
    }
}
