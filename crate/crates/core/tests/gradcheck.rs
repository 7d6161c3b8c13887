use stamp_core::gradcheck::{
    check_model, random_problem, tiny_config, DEFAULT_STEP, DEFAULT_TOLERANCE,
};
use stamp_core::model::{Aggregator, Mixer, PeMode, StampConfig};

fn run(config: &StampConfig, seed: u64) {
    let (params, x, y) = random_problem(config, 3, seed).unwrap();
    let report = check_model(
        config,
        &params,
        &x,
        &y,
        DEFAULT_STEP,
        DEFAULT_TOLERANCE,
        None,
    )
    .unwrap();
    assert!(report.passed(), "{}", report.to_text());
    assert_eq!(report.tables.len(), params.named().len());
}

#[test]
fn tiny_default_model_passes() {
    run(&tiny_config(), 1);
}

#[test]
fn every_variant_passes() {
    for pe in PeMode::ALL {
        for mixer in [Mixer::None, Mixer::BasicGmlp, Mixer::CrissCrossGmlp] {
            for aggregator in [Aggregator::Mean, Aggregator::Mhap] {
                let mut c = tiny_config();
                c.depth = 1;
                c.pe_mode = pe;
                c.mixer = mixer;
                c.aggregator = aggregator;
                run(&c, 7);
            }
        }
    }
}

#[test]
fn multiclass_head_passes() {
    let mut c = tiny_config();
    c.n_classes = 3;
    run(&c, 3);
}

#[test]
fn flipped_sign_is_caught() {
    let c = tiny_config();
    let (params, x, y) = random_problem(&c, 3, 1).unwrap();
    let flip = |name: &str, t: &mut stamp_core::Tensor<f64>| {
        if name == "blocks.0.up.weight" {
            t.data_mut().iter_mut().for_each(|v| *v = -*v);
        }
    };
    let report = check_model(
        &c,
        &params,
        &x,
        &y,
        DEFAULT_STEP,
        DEFAULT_TOLERANCE,
        Some(&flip),
    )
    .unwrap();
    assert!(!report.passed());
    let failed: Vec<&str> = report
        .tables
        .iter()
        .filter(|t| !t.passed)
        .map(|t| t.table.as_str())
        .collect();
    assert_eq!(failed, ["blocks.0.up.weight"]);
}
