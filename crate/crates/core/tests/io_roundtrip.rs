use std::path::PathBuf;

use proptest::prelude::*;

use ttcm::model::{Configuration, InputTerm, KineticParams, PolyexpInput, Region};
use ttcm::{io, TacTable};

fn repo_file(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

prop_compose! {
    fn config()(
        rates in prop::collection::vec((1e-4f64..5.0, 1e-4f64..5.0, 0.0f64..5.0, 0.0f64..5.0), 1..5),
        terms in prop::collection::vec((-10.0f64..10.0, -20.0f64..-1e-3), 1..5),
    ) -> Option<Configuration> {
        let regions = rates
            .into_iter()
            .enumerate()
            .map(|(i, (k1, k2, k3, k4))| Region { id: format!("region-{i}"), params: KineticParams::new(k1, k2, k3, k4).unwrap() })
            .collect();
        let input = PolyexpInput::new(terms.into_iter().map(|(lambda, mu)| InputTerm { lambda, mu }).collect()).ok()?;
        Configuration::new(regions, input).ok()
    }
}

fn any_value() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6f64..1e6, (-300i32..300).prop_map(|e| 1.234_567_890_123_456_7 * 10f64.powi(e)), Just(0.0)]
}

proptest! {
    #[test]
    fn config_json_round_trip(cfg in config()) {
        prop_assume!(cfg.is_some());
        let cfg = cfg.unwrap();
        let mut buf = Vec::new();
        io::write_config(&cfg, &mut buf).unwrap();
        let back = io::read_config(buf.as_slice()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn tac_csv_round_trip(values in prop::collection::vec(any_value(), 6), wb in prop::collection::vec(1e-3f64..1e3, 3)) {
        let grid = vec![0.5, 1.0, 2.5];
        let samples: Vec<(f64, f64)> = grid.iter().copied().zip(wb).collect();
        let table = TacTable::new(
            grid,
            vec![("a".into(), values[..3].to_vec()), ("b b".into(), values[3..].to_vec())],
            Some(samples.clone()),
        ).unwrap();
        let mut buf = Vec::new();
        io::write_tacs(&table, &mut buf).unwrap();
        let back = io::read_tacs(buf.as_slice()).unwrap();
        prop_assert_eq!(back.time_grid(), table.time_grid());
        prop_assert_eq!(back.curves(), table.curves());

        let mut wb_buf = Vec::new();
        io::write_wb(&samples, &mut wb_buf).unwrap();
        prop_assert_eq!(io::read_wb(wb_buf.as_slice()).unwrap(), samples);
    }

    #[test]
    fn fmt_f64_is_lossless(v in any::<f64>()) {
        prop_assume!(v.is_finite());
        prop_assert_eq!(io::fmt_f64(v).parse::<f64>().unwrap(), v);
    }
}

#[test]
fn tac_csv_rejects_malformed_tables() {
    let cases = [
        "region_id,time_min,value\n",
        "region_id,time_min,value\na,1.0,2.0\na,1.0,3.0\n",
        "region_id,time_min,value\na,1.0,2.0\nb,2.0,3.0\n",
        "region_id,time_min,value\na,0.0,2.0\n",
        "region_id,time_min,value\na,1.0,nan\n",
        "region_id,time_min,value\na,1.0\n",
    ];
    for text in cases {
        assert!(io::read_tacs(text.as_bytes()).is_err(), "accepted {text:?}");
    }
}

#[test]
fn grid_specs() {
    assert_eq!(io::parse_grid_spec("list:1,2,3.5").unwrap(), vec![1.0, 2.0, 3.5]);
    assert_eq!(io::parse_grid_spec("lin:1,4,4").unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
    let g = io::parse_grid_spec("log:0.25,60,16").unwrap();
    assert_eq!(g.len(), 16);
    assert_eq!((g[0], g[15]), (0.25, 60.0));
    assert!(g.windows(2).all(|w| w[0] < w[1]));
    for bad in ["", "1,2,3", "list:0,1,2", "list:1,1,2", "list:-1,2", "log:0,1,4", "lin:1,2", "list:3,2,1", "lin:1,4,2.5", "cubic:1,2,3"] {
        assert!(io::parse_grid_spec(bad).is_err(), "accepted {bad:?}");
    }
}

#[test]
fn wb_sidecar_naming() {
    assert_eq!(io::wb_sidecar_path(&PathBuf::from("out/tacs.csv")), PathBuf::from("out/tacs.wb.csv"));
}

#[test]
fn demo_config_matches_schema_keys() {
    let schema: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(repo_file("schema/configuration.schema.json")).unwrap()).unwrap();
    let demo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(repo_file("demo/config.json")).unwrap()).unwrap();
    let top: Vec<&String> = schema["properties"].as_object().unwrap().keys().collect();
    for key in demo.as_object().unwrap().keys() {
        assert!(top.contains(&key), "demo key {key} not in schema");
    }
    for key in schema["required"].as_array().unwrap() {
        assert!(demo.get(key.as_str().unwrap()).is_some());
    }
    let cfg = io::read_config_file(&repo_file("demo/config.json")).unwrap();
    let mut buf = Vec::new();
    io::write_config(&cfg, &mut buf).unwrap();
    let rewritten: serde_json::Value = serde_json::from_slice(&buf).unwrap();
    assert_eq!(rewritten, demo);
}
