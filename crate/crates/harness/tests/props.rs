use gk_harness::plot::{emit_plotdata, read_table, LOG_FLOOR};
use gk_harness::run::{num, write_csv};
use gk_harness::{parse_config, Table};
use proptest::prelude::*;

proptest! {
    #[test]
    fn num_round_trips(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        let back: f64 = num(x).parse().unwrap();
        prop_assert_eq!(back.to_bits(), x.to_bits());
    }

    #[test]
    fn csv_round_trips(rows in prop::collection::vec((0.0f64..1e3, -1e3f64..1e3), 1..20)) {
        let mut t = Table::new(["time", "D_omega"]);
        for (a, b) in &rows {
            t.push(vec![num(*a), num(*b)]);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_csv(&path, &["gk test".to_string()], &t).unwrap();
        let back = read_table(&std::fs::read_to_string(&path).unwrap()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn log_series_never_below_floor(ys in prop::collection::vec(0.0f64..1e6, 1..20)) {
        let mut t = Table::new(["time", "D_omega"]);
        for (i, y) in ys.iter().enumerate() {
            t.push(vec![num(i as f64), num(*y)]);
        }
        let out = emit_plotdata(&t, "log_D_omega").unwrap();
        for r in &out.rows {
            let v: f64 = r[1].parse().unwrap();
            prop_assert!(v >= LOG_FLOOR && v.is_finite());
        }
    }

    #[test]
    fn config_hash_tracks_text(kappa in 0.1f64..10.0, pad in 0usize..4) {
        let text = |k: f64| format!(
            "experiment = \"simulate\"\n{}[response]\nkind = \"linear\"\n[ensemble]\nN = 3\nkappa = {}\ntheta0 = [0.0, 0.1, 0.2]\nnu = [0.0, 0.0, 0.0]\n[run]\nt_end = 1.0\n",
            "\n".repeat(pad), num(k)
        );
        let a = parse_config(&text(kappa)).unwrap();
        let b = parse_config(&text(kappa)).unwrap();
        let c = parse_config(&text(kappa + 1.0)).unwrap();
        prop_assert_eq!(&a.hash, &b.hash);
        prop_assert_ne!(&a.hash, &c.hash);
    }
}
