use std::collections::BTreeSet;

use geodeg::chem::{parse_smiles, to_hypergraph, Element, MolecularHypergraph};
use geodeg::geometry::{build_meta_geometry, Geometry};
use geodeg::meta_grammar::build_meta_rules;
use geodeg::mol_grammar::{log_prob, map_decomposition, sample_decomposition, IterationRecord, ThetaParams};
use geodeg::optim::Adam;
use geodeg::diffusion::{DiffusionParams, GraphView};
use geodeg::training::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn geo() -> Geometry {
    build_meta_geometry(&build_meta_rules(4).unwrap(), 10).unwrap()
}

fn quick() -> TrainConfig {
    TrainConfig { outer_epochs: 2, inner_epochs: 5, seeds: vec![0], ..Default::default() }
}

fn hg(s: &str) -> MolecularHypergraph {
    to_hypergraph(&parse_smiles(s).unwrap())
}

#[test]
fn synthetic_targets_follow_the_formula() {
    let ds = synthetic_dataset();
    assert_eq!(ds.len(), 60);
    for r in &ds.records {
        let g = parse_smiles(&r.smiles).unwrap();
        let h = to_hypergraph(&g);
        let hetero = g.atoms.iter().filter(|a| a.element != Element::C).count() as f64;
        let branch = g.adjacency().iter().filter(|n| n.len() >= 3).count() as f64;
        let t = 0.5 * g.atom_count() as f64 + 1.5 * h.ring_count() as f64 + hetero - 0.3 * branch;
        assert!((t - r.target).abs() < 5e-5, "{}: {t} vs {}", r.smiles, r.target);
    }
}

#[test]
fn csv_errors_name_the_line() {
    let text = "mol_id,smiles,target\na,CC,1.0\nb,CCC,oops\n";
    match LabeledDataset::read_csv(text.as_bytes(), Task::Regression) {
        Err(TrainError::Csv { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    let dup = "mol_id,smiles,target\na,CC,1\na,CCC,2\n";
    assert!(matches!(
        LabeledDataset::read_csv(dup.as_bytes(), Task::Regression),
        Err(TrainError::DuplicateId(_))
    ));
    let bad = "mol_id,smiles,target\na,CC,0.5\n";
    assert!(LabeledDataset::read_csv(bad.as_bytes(), Task::Classification).is_err());
}

#[test]
fn fixed_split_column() {
    let text = "mol_id,smiles,target,split\na,CC,1,train\nb,CCC,2,test\nc,CCCC,3,train\n";
    let ds = LabeledDataset::read_csv(text.as_bytes(), Task::Regression).unwrap();
    let s = resolve_split(&ds, 0.8, 99).unwrap();
    assert_eq!((s.train, s.test), (vec![0, 2], vec![1]));
    let mixed = "mol_id,smiles,target,split\na,CC,1,train\nb,CCC,2,\n";
    assert!(LabeledDataset::read_csv(mixed.as_bytes(), Task::Regression).is_err());
    let bad = "mol_id,smiles,target,split\na,CC,1,validation\n";
    assert!(matches!(LabeledDataset::read_csv(bad.as_bytes(), Task::Regression), Err(TrainError::Csv { line: 2, .. })));
}

#[test]
fn splits() {
    let ds = synthetic_dataset();
    let ten = LabeledDataset::new(ds.records[..10].to_vec(), Task::Regression).unwrap();
    let s = split_dataset(&ten, 0.8, 7).unwrap();
    assert_eq!((s.train.len(), s.test.len()), (8, 2));
    let all: BTreeSet<usize> = s.train.iter().chain(&s.test).copied().collect();
    assert_eq!(all, (0..10).collect());
    assert_eq!(s, split_dataset(&ten, 0.8, 7).unwrap());
    let four = LabeledDataset::new(ds.records[..4].to_vec(), Task::Regression).unwrap();
    assert!(matches!(split_dataset(&four, 0.8, 0), Err(TrainError::TooSmall(4))));

    let splits: Vec<BTreeSet<usize>> = (0..5)
        .map(|seed| split_dataset(&ds, 0.8, seed).unwrap().test.into_iter().collect())
        .collect();
    for a in 0..5 {
        for b in a + 1..5 {
            assert_ne!(splits[a], splits[b]);
        }
    }
}

/// Every history Algorithm 1 can produce from `owned`, as rounds.
fn all_histories(m: usize, owned: Vec<bool>, logits: &[f64]) -> Vec<Vec<IterationRecord>> {
    let candidates: Vec<usize> = (0..m).filter(|&e| !owned[e]).collect();
    if candidates.is_empty() {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for mask in 0u32..(1 << candidates.len()) {
        let draws: Vec<bool> = (0..candidates.len()).map(|i| mask >> i & 1 == 1).collect();
        let forced = (mask == 0).then(|| {
            *candidates
                .iter()
                .reduce(|a, b| if logits[*b] > logits[*a] { b } else { a })
                .unwrap()
        });
        let record = IterationRecord { candidates: candidates.clone(), draws, forced };
        let mut next = owned.clone();
        for e in record.selected() {
            next[e] = true;
        }
        for rest in all_histories(m, next, logits) {
            let mut h = vec![record.clone()];
            h.extend(rest);
            out.push(h);
        }
    }
    out
}

/// An arbitrary deterministic loss of the sampled outcome.
fn toy_loss(history: &[IterationRecord]) -> f64 {
    let mut l = 0.5;
    for (r, record) in history.iter().enumerate() {
        for e in record.selected() {
            l += (r + 1) as f64 * (e + 2) as f64;
        }
        if record.forced.is_some() {
            l += 3.0;
        }
    }
    l
}

fn exact_gradient(theta: &ThetaParams, h: &MolecularHypergraph, loss: impl Fn(&[IterationRecord]) -> f64) -> Vec<f64> {
    let m = h.hyperedge_count();
    let logits: Vec<f64> = geodeg::mol_grammar::hyperedge_phis(h, theta)
        .iter()
        .map(|p| (p / (1.0 - p)).ln())
        .collect();
    let mut grad = vec![0.0; ThetaParams::LEN];
    let mut total = 0.0;
    for hist in all_histories(m, vec![false; m], &logits) {
        let (lp, score) = log_prob(theta, h, &hist).unwrap();
        total += lp.exp();
        for (g, s) in grad.iter_mut().zip(score) {
            *g += lp.exp() * loss(&hist) * s;
        }
    }
    assert!((total - 1.0).abs() < 1e-12);
    grad
}

/// Mean and standard error of `dir . estimate` over `n` single-sample draws.
fn estimator_stats(theta: &ThetaParams, h: &MolecularHypergraph, dir: &[f64], baseline: bool, n: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rm = RunningMean::default();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        let dec = sample_decomposition(h, theta, &mut rng).unwrap();
        let (_, score) = log_prob(theta, h, &dec.history).unwrap();
        let g = reinforce_grad(&[score], &[toy_loss(&dec.history)], baseline.then_some(&mut rm));
        let x: f64 = g.iter().zip(dir).map(|(a, b)| a * b).sum();
        sum += x;
        sum_sq += x * x;
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean) * n as f64 / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[test]
fn reinforce_is_unbiased_on_a_two_hyperedge_toy() {
    let h = hg("CCO");
    assert_eq!(h.hyperedge_count(), 2);
    // phi = 1/2 everywhere; only the output bias has a non-zero score.
    let theta = ThetaParams::zeros();
    let constant = exact_gradient(&theta, &h, |_| 2.5);
    assert!(constant.iter().all(|g| g.abs() < 1e-12));
    let exact = exact_gradient(&theta, &h, toy_loss);
    let mut dir = vec![0.0; ThetaParams::LEN];
    dir[ThetaParams::LEN - 1] = 1.0;
    assert!(exact.iter().enumerate().all(|(i, g)| i == ThetaParams::LEN - 1 || *g == 0.0));
    let target = exact[ThetaParams::LEN - 1];
    assert!(target.abs() > 0.1);
    for baseline in [false, true] {
        let (mean, se) = estimator_stats(&theta, &h, &dir, baseline, 100_000, 17);
        assert!((mean - target).abs() < 3.0 * se, "baseline {baseline}: {mean} vs {target} (se {se})");
    }
}

#[test]
fn reinforce_is_unbiased_off_the_symmetric_point() {
    let h = hg("CC=O");
    let theta = ThetaParams::random(&mut ChaCha8Rng::seed_from_u64(4), 1.0);
    let exact = exact_gradient(&theta, &h, toy_loss);
    let norm = exact.iter().map(|x| x * x).sum::<f64>().sqrt();
    let dir: Vec<f64> = exact.iter().map(|x| x / norm).collect();
    for baseline in [false, true] {
        let (mean, se) = estimator_stats(&theta, &h, &dir, baseline, 100_000, 23);
        assert!((mean - norm).abs() < 3.0 * se, "baseline {baseline}: {mean} vs {norm} (se {se})");
    }
}

#[test]
fn zero_outer_epochs_keep_theta() {
    let ds = synthetic_dataset();
    let cfg = TrainConfig { outer_epochs: 0, ..quick() };
    let split = split_dataset(&ds, 0.8, 3).unwrap();
    let out = train(&cfg, &ds, &split, &geo(), 3).unwrap();
    assert_eq!(out.model.theta, initial_theta(&cfg, 3));
    assert_eq!(out.loss_trace.len(), 1);
    let moved = train(&TrainConfig { outer_epochs: 1, ..quick() }, &ds, &split, &geo(), 3).unwrap();
    assert_ne!(moved.model.theta, initial_theta(&cfg, 3));
}

#[test]
fn identical_seeds_give_identical_runs() {
    let ds = synthetic_dataset();
    let g = geo();
    let run = || {
        let (out, rep) = run_seed(&quick(), &ds, &g, 1).unwrap();
        let (report, _) = build_report(&quick(), vec![(out, rep)]);
        serde_json::to_string(&report).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn test_labels_never_reach_training() {
    let ds = synthetic_dataset();
    let g = geo();
    for mode in [TrainMode::Transductive, TrainMode::Inductive] {
        let cfg = TrainConfig { mode, ..quick() };
        let split = split_dataset(&ds, 0.8, 2).unwrap();
        let out = train(&cfg, &ds, &split, &g, 2).unwrap();
        let train_ids: BTreeSet<String> = split.train.iter().map(|&i| ds.records[i].mol_id.clone()).collect();
        assert!(!out.labels_used.is_empty());
        assert!(out.labels_used.is_subset(&train_ids));

        let mut tainted = ds.clone();
        for &i in &split.test {
            tainted.records[i].target += 1000.0;
        }
        let other = train(&cfg, &tainted, &split, &g, 2).unwrap();
        assert_eq!(out.model, other.model);
        for (a, b) in out.test_predictions.iter().zip(&other.test_predictions) {
            assert_eq!(a.1.to_bits(), b.1.to_bits());
        }
    }
}

#[test]
fn inner_loop_mostly_decreases_the_loss() {
    let ds = synthetic_dataset();
    let cfg = TrainConfig::default();
    let dcfg = cfg.diffusion_for_task();
    let theta = initial_theta(&cfg, 0);
    let mut g = geo();
    let mut fps = std::collections::BTreeMap::new();
    for r in &ds.records {
        let h = hg(&r.smiles);
        g.attach_leaf(&map_decomposition(&h, &theta).unwrap().junction_tree, &r.mol_id).unwrap();
        fps.insert(r.mol_id.clone(), geodeg::diffusion::leaf_fingerprint(&h, 2, dcfg.fingerprint_dim));
    }
    let view = GraphView::new(&g, &fps, dcfg.fingerprint_dim).unwrap();
    let mean = ds.records.iter().map(|r| r.target).sum::<f64>() / 60.0;
    let targets: Vec<Option<f64>> = view
        .leaf_ids
        .iter()
        .map(|id| Some(ds.records.iter().find(|r| &r.mol_id == id).unwrap().target - mean))
        .collect();
    let mut params = DiffusionParams::init(&g, dcfg.d, dcfg.fingerprint_dim, &mut ChaCha8Rng::seed_from_u64(0));
    let mut opt = Adam::new(cfg.lr_diffusion, params.len());
    let losses = train_inner(&view, &mut params, &mut opt, &dcfg, &targets, cfg.inner_epochs).unwrap();
    let down = losses.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(down as f64 >= 0.9 * (losses.len() - 1) as f64, "{down} of {}", losses.len() - 1);
    assert!(losses.last().unwrap() < &losses[0]);
}

#[test]
fn predict_reuses_training_leaves_and_rejects_uncovered_trees() {
    let ds = synthetic_dataset();
    let g = geo();
    let cfg = TrainConfig { mode: TrainMode::Transductive, ..quick() };
    let split = split_dataset(&ds, 0.8, 0).unwrap();
    let out = train(&cfg, &ds, &split, &g, 0).unwrap();
    let queries: Vec<(String, String)> = out
        .test_predictions
        .iter()
        .map(|(id, _, _)| {
            let r = ds.records.iter().find(|r| &r.mol_id == id).unwrap();
            (r.mol_id.clone(), r.smiles.clone())
        })
        .collect();
    let preds = predict(&out.model, &g, &queries).unwrap();
    assert_eq!(preds.len(), queries.len());
    for (p, (_, q, _)) in preds.iter().zip(&out.test_predictions) {
        assert!((p - q).abs() < 1e-8);
    }

    // Fresh molecules come back in input order, one prediction each.
    let fresh = vec![
        ("n1".to_string(), "CCCCCC".to_string()),
        ("n2".to_string(), "OC(=O)C".to_string()),
        ("n1b".to_string(), "CCCCCC".to_string()),
    ];
    let p = predict(&out.model, &g, &fresh).unwrap();
    assert_eq!(p.len(), 3);
    assert_eq!(p[0].to_bits(), p[2].to_bits());
    let single = predict(&out.model, &g, &fresh[1..2]).unwrap();
    assert_eq!(single[0].to_bits(), p[1].to_bits());

    // A ring carrying six substituents needs a junction node of degree above 4.
    let mut model = out.model.clone();
    model.theta = ThetaParams::zeros();
    model.theta.b2 = 5.0;
    let err = predict(&model, &g, &[("hex".into(), "Cc1c(C)c(C)c(C)c(C)c1C".into())]).unwrap_err();
    assert!(matches!(err, TrainError::NotCovered { .. }), "{err}");
    assert!(predict(&model, &g, &[("bad".into(), "C1CC".into())]).is_err());
}

#[test]
fn coverage_policy() {
    let mut records = synthetic_dataset().records[..10].to_vec();
    records.push(Record { mol_id: "big".into(), smiles: "CCCCCCCCCCCCCCC".into(), target: 7.5, split: None });
    let ds = LabeledDataset::new(records, Task::Regression).unwrap();
    let g = geo();
    let split = split_dataset(&ds, 0.8, 0).unwrap();
    let cfg = TrainConfig { theta_init_bias: 5.0, theta_init_scale: 0.0, ..quick() };
    let out = train(&cfg, &ds, &split, &g, 0).unwrap();
    assert_eq!(out.excluded, vec!["big".to_string()]);
    let strict = TrainConfig { policy: CoveragePolicy::Error, ..cfg };
    assert!(matches!(train(&strict, &ds, &split, &g, 0), Err(TrainError::NotCovered { .. })));
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    for bad in [
        TrainConfig { split_ratio: 1.0, ..Default::default() },
        TrainConfig { inner_epochs: 0, ..Default::default() },
        TrainConfig { n_reinforce_samples: 0, ..Default::default() },
        TrainConfig { seeds: vec![], ..Default::default() },
        TrainConfig { lr_theta: -1.0, ..Default::default() },
    ] {
        assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
    }
}
