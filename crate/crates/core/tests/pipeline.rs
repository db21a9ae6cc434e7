use treetilt::fitting::{fit_full, EmConfig, FitConfig, FittedFullModel};
use treetilt::impute::{impute_conjugate, impute_rejection_from_model, RejectionConfig};
use treetilt::inference::{bootstrap_from, covariance_block_check, BootstrapConfig, CiMethod};
use treetilt::sensitivity::{perturb, sweep, SweepFunctional, SweepSpec};
use treetilt::simharness::{generate, GeneratorConfig};
use treetilt::treegraph::build_lncmv;
use treetilt::IncompleteDataset;

fn cfg() -> FitConfig {
    FitConfig {
        k: 2,
        em: EmConfig {
            restarts: 3,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn setup() -> (IncompleteDataset, GeneratorConfig, FittedFullModel) {
    let gen = GeneratorConfig::appendix_b();
    let (data, _) = generate(&gen, 3000, 17).unwrap();
    let model = fit_full(&data, &gen.tree, gen.family(), &cfg(), 3).unwrap();
    (data, gen, model)
}

fn assert_completes(data: &IncompleteDataset, completed: &[Vec<f64>]) {
    assert_eq!(completed.len(), data.len());
    for (row, done) in data.rows().iter().zip(completed) {
        for (x, y) in row.iter().zip(done) {
            assert!(y.is_finite());
            if let Some(x) = x {
                assert_eq!(x, y);
            }
        }
    }
}

#[test]
fn fit_is_deterministic_and_round_trips() {
    let (data, gen, model) = setup();
    let again = fit_full(&data, &gen.tree, gen.family(), &cfg(), 3).unwrap();
    assert_eq!(model, again);
    let text = serde_json::to_string(&model.to_json()).unwrap();
    let back = FittedFullModel::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
    assert_eq!(back, model);
    let p: f64 = model.pattern_probs.values().sum();
    assert!((p - 1.0).abs() < 1e-12);
}

#[test]
fn both_samplers_complete_the_data() {
    let (data, _, model) = setup();
    let a = impute_conjugate(&data, &model, 3, 5).unwrap();
    let b = impute_rejection_from_model(&data, &model, 3, &RejectionConfig::default(), 5).unwrap();
    for set in [&a, &b] {
        assert_eq!(set.m(), 3);
        for c in &set.completed {
            assert_completes(&data, c);
        }
        // binomial cells stay on the support
        assert!(set
            .pooled()
            .iter()
            .flatten()
            .all(|v| v.fract() == 0.0 && (0.0..=17.0).contains(v)));
    }
    assert_eq!(a.completed, impute_conjugate(&data, &model, 3, 5).unwrap().completed);
}

#[test]
fn zero_perturbation_and_base_sweep_agree() {
    let (data, _, model) = setup();
    let same = perturb(&model, &[0.0; 3]).unwrap();
    let f = SweepFunctional::Mean { coordinate: 2 };
    let base = f.evaluate(&model).unwrap();
    assert_eq!(f.evaluate(&same).unwrap(), base);
    let spec = SweepSpec {
        rho: vec![vec![0.0; 3], vec![0.0, 0.2, 0.0]],
        trees: vec![],
    };
    let rows = sweep(&data, &model, &spec, &f, &cfg()).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].value, Some(base));
    assert!(rows[1].value.unwrap() > base);

    let alt = SweepSpec {
        rho: vec![],
        trees: vec![("lncmv".into(), build_lncmv(model.tree.patterns()).unwrap())],
    };
    let rows = sweep(&data, &model, &alt, &f, &cfg()).unwrap();
    assert_eq!(rows[0].status, "ok");
}

#[test]
fn bootstrap_reports_every_parameter() {
    let (data, _, model) = setup();
    let bc = BootstrapConfig {
        b: 20,
        ..Default::default()
    };
    let draws = bootstrap_from(&data, &model, &cfg(), &bc, 11).unwrap();
    assert_eq!(draws.draws.len() + draws.failed.len(), 20);
    assert_eq!(draws.params.len(), model.parameters().len());
    let ci = draws.intervals(0.9, CiMethod::Percentile);
    assert!(ci.iter().all(|i| i.lower <= i.upper));
    let report = covariance_block_check(&draws, &model.tree, 0.1);
    assert!(!report.pairs.is_empty());
}
