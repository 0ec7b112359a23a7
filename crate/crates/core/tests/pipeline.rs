use reactive_beta::beta::{reactive_beta_path, ReactiveModel};
use reactive_beta::estimators::EstimatorKind;
use reactive_beta::experiment::{run_paths, run_table2, summarize};
use reactive_beta::io::{read_panel, RunConfig};
use reactive_beta::montecarlo::{generate_path, McModel};
use reactive_beta::ReactiveParams;

fn small_config(model: &str) -> RunConfig {
    let toml = format!(
        "seed = 11\n[simulate]\nestimators = [\"ols\", \"mad\", \"reactive\"]\n\
         [simulate.mc]\nmodel = \"{model}\"\nn_paths = 8\npath_len = 400\n"
    );
    RunConfig::from_toml_str(&toml).unwrap()
}

#[test]
fn config_drives_a_reproducible_simulation() {
    let cfg = small_config("mc3").experiment();
    assert_eq!(cfg.mc.seed, 11);
    assert_eq!(cfg.mc.model, McModel::Mc3);
    let a = run_table2(&cfg).unwrap();
    let b = run_table2(&cfg).unwrap();
    let json = |r| serde_json::to_string(r).unwrap();
    assert_eq!(json(&a), json(&b));
    assert_eq!(a.n_paths, 8);
    assert_eq!(a.rows.len(), 3);
    for kind in [
        EstimatorKind::Ols,
        EstimatorKind::Mad,
        EstimatorKind::Reactive,
    ] {
        let row = a.row(kind).unwrap();
        assert!(
            row.bias.value.is_finite() && row.absd >= 0.0,
            "{kind}: {row:?}"
        );
    }
    let paths = run_paths(&cfg).unwrap();
    assert_eq!(json(&summarize(&cfg, &paths).unwrap()), json(&a));
}

#[test]
fn f32_and_f64_recursions_agree_on_a_simulated_path() {
    let cfg = small_config("mc1").experiment();
    let path = generate_path(&cfg.mc, 3).unwrap();
    let params = ReactiveParams::default();
    let wide = reactive_beta_path(&params, &path.index_prices, &path.stock_prices).unwrap();
    let mut narrow = ReactiveModel::<f32>::single(
        &params,
        path.index_prices[0] as f32,
        path.stock_prices[0] as f32,
    )
    .unwrap();
    for t in 1..path.index_prices.len() {
        let b = narrow
            .step_single(path.index_prices[t] as f32, path.stock_prices[t] as f32)
            .unwrap();
        match (b, wide[t]) {
            (Some(n), Some(w)) => {
                assert!((n as f64 - w).abs() < 1e-3 * w.abs().max(1.0), "day {t}")
            }
            (None, None) => {}
            other => panic!("day {t}: {other:?}"),
        }
    }
}

#[test]
fn panel_columns_feed_the_streaming_model() {
    let mut csv = String::from("date,index,AAA\n");
    for t in 0..60 {
        let x = t as f64;
        let index = 100.0 * (1.0 + 0.05 * (x / 7.0).sin());
        let stock = 20.0 * (1.0 + 0.07 * (x / 7.0).sin() + 0.01 * (x / 2.0).cos());
        csv.push_str(&format!(
            "2020-{:02}-{:02},{index},{stock}\n",
            1 + t / 28,
            1 + t % 28
        ));
    }
    let panel = read_panel(csv.as_bytes()).unwrap();
    assert_eq!(panel.n_rows(), 60);
    let index = panel.dense("index").unwrap();
    let stock = panel.dense("AAA").unwrap();
    let betas = reactive_beta_path(&ReactiveParams::default(), &index, &stock).unwrap();
    assert!(betas[0].is_none());
    assert!(betas[2..].iter().all(|b| b.is_some_and(f64::is_finite)));
}
