use std::collections::BTreeMap;

use geodeg::chem::{parse_smiles, to_hypergraph};
use geodeg::diffusion::{
    decode, diffusivity_weights, encode, integrate, leaf_fingerprint, loss_and_grads, predict,
    DiffusionConfig, DiffusionParams, GraphView, Head, LossKind, Mode, Scheme, StateMatrix,
};
use geodeg::geometry::{build_meta_geometry, Geometry};
use geodeg::meta_grammar::build_meta_rules;
use geodeg::mol_grammar::{map_decomposition, ThetaParams};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FDIM: usize = 8;

/// k=4 meta geometry up to size 7 (22 nodes) with four molecular leaves.
fn small_geometry() -> (Geometry, BTreeMap<String, Vec<f64>>) {
    let mut geo = build_meta_geometry(&build_meta_rules(4).unwrap(), 7).unwrap();
    let theta = ThetaParams::zeros();
    let mut fps = BTreeMap::new();
    for (id, smi) in [("m1", "CCO"), ("m2", "CC(C)CO"), ("m3", "c1ccccc1C"), ("m4", "CCN")] {
        let h = to_hypergraph(&parse_smiles(smi).unwrap());
        let dec = map_decomposition(&h, &theta).unwrap();
        geo.attach_leaf(&dec.junction_tree, id).unwrap();
        fps.insert(id.to_string(), leaf_fingerprint(&h, 2, FDIM));
    }
    assert!(geo.node_count() <= 30);
    (geo, fps)
}

fn config(scheme: Scheme, mode: Mode, head: Head, loss: LossKind) -> DiffusionConfig {
    DiffusionConfig {
        d: 4,
        fingerprint_dim: FDIM,
        time: 2.0,
        steps: 6,
        scheme,
        mode,
        head,
        loss,
        ..Default::default()
    }
}

/// Named index ranges of the flat parameter vector.
fn groups(p: &DiffusionParams) -> Vec<(&'static str, std::ops::Range<usize>)> {
    let sizes = [
        ("embedding", p.embedding.len() * p.d),
        ("leaf_w", p.leaf_w.len()),
        ("leaf_b", p.leaf_b.len()),
        ("w_k", p.w_k.len()),
        ("w_q", p.w_q.len()),
        ("dec_w", p.dec_w.len()),
        ("dec_b", 1),
    ];
    let mut start = 0;
    sizes
        .into_iter()
        .map(|(name, len)| {
            start += len;
            (name, start - len..start)
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn gradients_match_central_differences() {
    let (geo, fps) = small_geometry();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut base = DiffusionParams::init(&geo, 4, FDIM, &mut rng);
    // Larger attention weights so the softmax is far from uniform.
    for w in base.w_k.iter_mut().chain(base.w_q.iter_mut()) {
        *w *= 3.0;
    }
    base.dec_b = 0.1;
    let view = GraphView::new(&geo, &fps, FDIM).unwrap();
    let cases = [
        (Scheme::Euler, Mode::Attention, Head::Regression, LossKind::Mse),
        (Scheme::Rk4, Mode::Attention, Head::Regression, LossKind::Mse),
        (Scheme::Euler, Mode::Uniform, Head::Regression, LossKind::Mse),
        (Scheme::Rk4, Mode::Uniform, Head::Regression, LossKind::Mse),
        (Scheme::Rk4, Mode::Attention, Head::Classification, LossKind::Bce),
        (Scheme::Euler, Mode::Attention, Head::Classification, LossKind::Mse),
    ];
    let targets = vec![Some(1.0), None, Some(0.0), Some(1.0)];
    for (scheme, mode, head, loss) in cases {
        let cfg = config(scheme, mode, head, loss);
        let (_, grads) = loss_and_grads(&view, &base, &cfg, &targets).unwrap();
        let analytic = grads.flatten();
        let x0 = base.flatten();
        let eps = 1e-5;
        let mut numeric = vec![0.0; x0.len()];
        let mut p = base.clone();
        for i in 0..x0.len() {
            let mut x = x0.clone();
            x[i] = x0[i] + eps;
            p.assign(&x).unwrap();
            let up = loss_and_grads(&view, &p, &cfg, &targets).unwrap().0;
            x[i] = x0[i] - eps;
            p.assign(&x).unwrap();
            let down = loss_and_grads(&view, &p, &cfg, &targets).unwrap().0;
            numeric[i] = (up - down) / (2.0 * eps);
        }
        for (name, range) in groups(&base) {
            let a = &analytic[range.clone()];
            let n = &numeric[range];
            if mode == Mode::Uniform && (name == "w_k" || name == "w_q") {
                assert!(a.iter().all(|&x| x == 0.0), "{name} must be exactly zero");
                assert!(norm(n) < 1e-12);
                continue;
            }
            let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
            let scale = norm(a).max(norm(n));
            assert!(scale > 1e-8, "{scheme:?}/{mode:?} {name}: vanishing gradient");
            let rel = norm(&diff) / scale;
            assert!(rel < 1e-4, "{scheme:?}/{mode:?}/{loss:?} {name}: relative error {rel:e}");
        }
    }
}

#[test]
fn constant_rows_are_fixed_points() {
    let (geo, fps) = small_geometry();
    let view = GraphView::new(&geo, &fps, FDIM).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = DiffusionParams::init(&geo, 4, FDIM, &mut rng);
    let row: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mut u0 = StateMatrix::zeros(view.node_count(), 4);
    for i in 0..u0.rows {
        u0.row_mut(i).copy_from_slice(&row);
    }
    for scheme in [Scheme::Euler, Scheme::Rk4] {
        for mode in [Mode::Attention, Mode::Uniform] {
            let cfg = DiffusionConfig { time: 4.0, steps: 16, ..config(scheme, mode, Head::Regression, LossKind::Mse) };
            let ut = integrate(&view, &u0, &p, &cfg).unwrap();
            for (a, b) in ut.data.iter().zip(&u0.data) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn zero_time_is_identity() {
    let (geo, fps) = small_geometry();
    let view = GraphView::new(&geo, &fps, FDIM).unwrap();
    let p = DiffusionParams::init(&geo, 4, FDIM, &mut ChaCha8Rng::seed_from_u64(4));
    let u0 = encode(&view, &p).unwrap();
    for steps in [0, 5] {
        let cfg = DiffusionConfig { time: 0.0, steps, ..config(Scheme::Rk4, Mode::Attention, Head::Regression, LossKind::Mse) };
        assert_eq!(integrate(&view, &u0, &p, &cfg).unwrap(), u0);
    }
}

#[test]
fn attention_rows_are_stochastic() {
    let (geo, fps) = small_geometry();
    let view = GraphView::new(&geo, &fps, FDIM).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let mut p = DiffusionParams::init(&geo, 4, FDIM, &mut rng);
        for w in p.w_k.iter_mut().chain(p.w_q.iter_mut()) {
            *w = rng.gen_range(-3.0..3.0);
        }
        let u = encode(&view, &p).unwrap();
        let cfg = config(Scheme::Rk4, Mode::Attention, Head::Regression, LossKind::Mse);
        let a = diffusivity_weights(&view, &u, &p, &cfg);
        for i in 0..view.node_count() {
            let r = view.csr.row(i);
            let sum: f64 = a[r.clone()].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            if r.len() == 1 {
                assert_eq!(a[r.start], 1.0);
            }
        }
        // Zero attention parameters give uniform weights.
        p.w_k.fill(0.0);
        p.w_q.fill(0.0);
        let a = diffusivity_weights(&view, &u, &p, &cfg);
        for i in 0..view.node_count() {
            let r = view.csr.row(i);
            for &w in &a[r.clone()] {
                assert!((w - 1.0 / r.len() as f64).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn two_node_euler_step_closed_form() {
    let geo = build_meta_geometry(&build_meta_rules(1).unwrap(), 2).unwrap();
    let view = GraphView::new(&geo, &BTreeMap::new(), FDIM).unwrap();
    let p = DiffusionParams::init(&geo, 2, FDIM, &mut ChaCha8Rng::seed_from_u64(1));
    let mut u0 = StateMatrix::zeros(2, 2);
    u0.data = vec![1.0, -1.0, 3.0, 0.5];
    let h = 0.3;
    let cfg = DiffusionConfig { d: 2, time: h, steps: 1, ..config(Scheme::Euler, Mode::Uniform, Head::Regression, LossKind::Mse) };
    let ut = integrate(&view, &u0, &p, &cfg).unwrap();
    let expected = [1.0 + h * 2.0, -1.0 + h * 1.5, 3.0 - h * 2.0, 0.5 - h * 1.5];
    for (a, b) in ut.data.iter().zip(expected) {
        assert!((a - b).abs() < 1e-15);
    }
}

/// `exp(t (D^-1 A - I)) U0` via the symmetric matrix `D^-1/2 A D^-1/2`.
fn matrix_exponential_reference(view: &GraphView, u0: &StateMatrix, t: f64) -> DMatrix<f64> {
    let n = view.node_count();
    let deg: Vec<f64> = (0..n).map(|i| view.csr.row(i).len() as f64).collect();
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for p in view.csr.row(i) {
            let j = view.csr.targets[p];
            s[(i, j)] = 1.0 / (deg[i] * deg[j]).sqrt();
        }
    }
    let eig = SymmetricEigen::new(s);
    let decay = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| (t * (l - 1.0)).exp()));
    let sym = &eig.eigenvectors * decay * eig.eigenvectors.transpose();
    let mut prop = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            prop[(i, j)] = sym[(i, j)] * (deg[j] / deg[i]).sqrt();
        }
    }
    prop * DMatrix::from_row_slice(n, u0.cols, &u0.data)
}

#[test]
fn rk4_beats_euler_on_linear_system() {
    let (geo, fps) = small_geometry();
    let view = GraphView::new(&geo, &fps, FDIM).unwrap();
    let p = DiffusionParams::init(&geo, 4, FDIM, &mut ChaCha8Rng::seed_from_u64(21));
    let u0 = encode(&view, &p).unwrap();
    for steps in [4, 16] {
        let reference = matrix_exponential_reference(&view, &u0, 4.0);
        let err = |scheme| {
            let cfg = DiffusionConfig { time: 4.0, steps, ..config(scheme, Mode::Uniform, Head::Regression, LossKind::Mse) };
            let ut = integrate(&view, &u0, &p, &cfg).unwrap();
            (DMatrix::from_row_slice(ut.rows, ut.cols, &ut.data) - &reference).norm()
        };
        let (euler, rk4) = (err(Scheme::Euler), err(Scheme::Rk4));
        assert!(rk4 < euler, "steps={steps}: rk4 {rk4:e} vs euler {euler:e}");
        eprintln!("steps={steps}: euler {euler:e} rk4 {rk4:e}");
    }
    // The oracle itself: fine RK4 converges onto it.
    let cfg = DiffusionConfig { time: 4.0, steps: 400, ..config(Scheme::Rk4, Mode::Uniform, Head::Regression, LossKind::Mse) };
    let ut = integrate(&view, &u0, &p, &cfg).unwrap();
    let reference = matrix_exponential_reference(&view, &u0, 4.0);
    assert!((DMatrix::from_row_slice(ut.rows, ut.cols, &ut.data) - reference).norm() < 1e-9);
}

#[test]
fn isomorphic_leaves_share_initial_rows() {
    let mut geo = build_meta_geometry(&build_meta_rules(4).unwrap(), 5).unwrap();
    let theta = ThetaParams::zeros();
    let mut fps = BTreeMap::new();
    for (id, smi) in [("a", "OCC"), ("b", "CCO")] {
        let h = to_hypergraph(&parse_smiles(smi).unwrap());
        geo.attach_leaf(&map_decomposition(&h, &theta).unwrap().junction_tree, id).unwrap();
        fps.insert(id.to_string(), leaf_fingerprint(&h, 2, FDIM));
    }
    let view = GraphView::new(&geo, &fps, FDIM).unwrap();
    let p = DiffusionParams::init(&geo, 4, FDIM, &mut ChaCha8Rng::seed_from_u64(2));
    let u0 = encode(&view, &p).unwrap();
    assert_eq!(u0.row(view.leaf_rows[0]), u0.row(view.leaf_rows[1]));
    let cfg = config(Scheme::Rk4, Mode::Attention, Head::Regression, LossKind::Mse);
    let pred = predict(&view, &p, &cfg).unwrap();
    assert_eq!(pred[0], pred[1]);
    assert_eq!(decode(&view, &u0, &p, Head::Regression).len(), 2);
}

#[test]
fn forward_is_deterministic() {
    let (geo, fps) = small_geometry();
    let view = GraphView::new(&geo, &fps, FDIM).unwrap();
    let run = || {
        let p = DiffusionParams::init(&geo, 4, FDIM, &mut ChaCha8Rng::seed_from_u64(8));
        let cfg = config(Scheme::Rk4, Mode::Attention, Head::Regression, LossKind::Mse);
        loss_and_grads(&view, &p, &cfg, &[Some(1.0), Some(2.0), None, Some(0.0)]).unwrap()
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a.to_bits(), b.to_bits());
    assert_eq!(ga, gb);
}
