use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use tel::activation::Activation;
use tel::backward::dense_backward;
use tel::ensemble::{add_l2_gradient, Ensemble, Mode};
use tel::error::Error;
use tel::forward::{conditional_forward, dense_forward};
use tel::matrix::Matrix;
use tel::nn::softmax_cross_entropy;
use tel::parallel::Parallelism;
use tel::tree::TreeTopology;

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z
        })
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Random ensemble whose leaves are non-zero and whose hyperplanes mix
/// hard and fractional routing.
fn ensemble(depth: usize, m: usize, p: usize, k: usize, act: Activation, seed: u64) -> Ensemble {
    let mut e = Ensemble::new(depth, m, p, k, act, seed, 1.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in e.trees.iter_mut() {
        t.o = normal(&mut rng, t.o.rows(), k);
    }
    e
}

fn rel_close(a: &[f64], b: &[f64], rel: f64) {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= rel * scale, "{x:e} vs {y:e}");
    }
}

#[test]
fn single_tree_matches_conditional_forward() {
    let ens = ensemble(5, 1, 4, 3, Activation::smooth_step(0.5).unwrap(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = normal(&mut rng, 20, 4);
    let fwd = ens.forward(&x, Mode::Train, &Parallelism::serial()).unwrap();
    let act = ens.activation().as_smooth_step().unwrap();
    for b in 0..20 {
        let (out, _) = conditional_forward(&ens.trees[0], ens.topology(), &act, x.row(b)).unwrap();
        assert_eq!(fwd.logits.row(b), &out.logits[..]);
    }
}

#[test]
fn matches_sum_of_dense_trees() {
    for act in [Activation::smooth_step(0.3).unwrap(), Activation::logistic(0.5).unwrap()] {
        let ens = ensemble(6, 4, 5, 2, act, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = normal(&mut rng, 15, 5);
        let fwd = ens.forward(&x, Mode::Infer, &Parallelism::serial()).unwrap();
        for b in 0..15 {
            let mut sum = vec![0.0; 2];
            for t in &ens.trees {
                let out = dense_forward(t, ens.topology(), &act, x.row(b)).unwrap();
                sum.iter_mut().zip(&out.logits).for_each(|(s, v)| *s += v);
            }
            rel_close(fwd.logits.row(b), &sum, 1e-12);
        }
    }
}

#[test]
fn duplicated_tree_doubles_outputs_and_input_gradient() {
    let single = ensemble(4, 1, 3, 2, Activation::smooth_step(1.0).unwrap(), 5);
    let double =
        Ensemble::from_trees(*single.topology(), *single.activation(), vec![single.trees[0].clone(); 2]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = normal(&mut rng, 8, 3);
    let dl = normal(&mut rng, 8, 2);
    let par = Parallelism::serial();
    let f1 = single.forward(&x, Mode::Train, &par).unwrap();
    let f2 = double.forward(&x, Mode::Train, &par).unwrap();
    let doubled: Vec<f64> = f1.logits.as_slice().iter().map(|v| 2.0 * v).collect();
    rel_close(&doubled, f2.logits.as_slice(), 1e-15);
    let g1 = single.backward(&x, &f1, &dl, &par).unwrap();
    let g2 = double.backward(&x, &f2, &dl, &par).unwrap();
    for (a, b) in g1.d_x.as_slice().iter().zip(g2.d_x.as_slice()) {
        assert_eq!(2.0 * a, *b);
    }
    assert_eq!(g2.trees[0], g1.trees[0]);
    assert_eq!(g2.trees[1], g1.trees[0]);
}

#[test]
fn backward_matches_dense_oracle() {
    for (m, act) in [
        (1, Activation::smooth_step(0.4).unwrap()),
        (3, Activation::smooth_step(1.0).unwrap()),
        (3, Activation::logistic(0.7).unwrap()),
    ] {
        let ens = ensemble(5, m, 4, 3, act, 7 + m as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = normal(&mut rng, 12, 4);
        let labels: Vec<usize> = (0..12).map(|_| rng.random_range(0..3)).collect();
        let par = Parallelism::serial();
        let fwd = ens.forward(&x, Mode::Train, &par).unwrap();
        let (_, dl) = softmax_cross_entropy(&fwd.logits, &labels).unwrap();
        let g = ens.backward(&x, &fwd, &dl, &par).unwrap();
        for (j, tree) in ens.trees.iter().enumerate() {
            let mut d_w = Matrix::zeros(tree.w.rows(), 4);
            let mut d_o = Matrix::zeros(tree.o.rows(), 3);
            for b in 0..12 {
                let dense = dense_backward(tree, ens.topology(), &act, x.row(b), dl.row(b)).unwrap();
                d_w.as_mut_slice().iter_mut().zip(dense.d_w.as_slice()).for_each(|(s, v)| *s += v);
                d_o.as_mut_slice().iter_mut().zip(dense.d_o.as_slice()).for_each(|(s, v)| *s += v);
            }
            rel_close(g.trees[j].d_w.as_slice(), d_w.as_slice(), 1e-12);
            rel_close(g.trees[j].d_o.as_slice(), d_o.as_slice(), 1e-12);
        }
    }
}

#[test]
fn logistic_layer_matches_finite_differences() {
    // The logistic layer is smooth everywhere, so no coordinate is skipped.
    let ens = ensemble(3, 2, 3, 2, Activation::logistic(0.8).unwrap(), 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = normal(&mut rng, 5, 3);
    let labels = [0, 1, 1, 0, 1];
    let par = Parallelism::serial();
    let loss = |e: &Ensemble, x: &Matrix| {
        let f = e.forward(x, Mode::Infer, &par).unwrap();
        softmax_cross_entropy(&f.logits, &labels).unwrap().0 + e.l2_penalty(0.1)
    };
    let fwd = ens.forward(&x, Mode::Train, &par).unwrap();
    let (_, dl) = softmax_cross_entropy(&fwd.logits, &labels).unwrap();
    let mut g = ens.backward(&x, &fwd, &dl, &par).unwrap();
    add_l2_gradient(&mut g, &ens, 0.1).unwrap();
    let check = |a: f64, fd: f64| assert!((a - fd).abs() <= 1e-6 * a.abs().max(fd.abs()).max(1e-3), "{a} vs {fd}");
    for i in 0..x.as_slice().len() {
        let h = 1e-6 * x.as_slice()[i].abs().max(1.0);
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp.as_mut_slice()[i] += h;
        xm.as_mut_slice()[i] -= h;
        check(g.d_x.as_slice()[i], (loss(&ens, &xp) - loss(&ens, &xm)) / (2.0 * h));
    }
    for j in 0..2 {
        for i in 0..ens.trees[j].w.as_slice().len() {
            let h = 1e-6 * ens.trees[j].w.as_slice()[i].abs().max(1.0);
            let (mut ep, mut em) = (ens.clone(), ens.clone());
            ep.trees[j].w.as_mut_slice()[i] += h;
            em.trees[j].w.as_mut_slice()[i] -= h;
            check(g.trees[j].d_w.as_slice()[i], (loss(&ep, &x) - loss(&em, &x)) / (2.0 * h));
        }
        for i in 0..ens.trees[j].o.as_slice().len() {
            let h = 1e-6 * ens.trees[j].o.as_slice()[i].abs().max(1.0);
            let (mut ep, mut em) = (ens.clone(), ens.clone());
            ep.trees[j].o.as_mut_slice()[i] += h;
            em.trees[j].o.as_mut_slice()[i] -= h;
            check(g.trees[j].d_o.as_slice()[i], (loss(&ep, &x) - loss(&em, &x)) / (2.0 * h));
        }
    }
}

#[test]
fn duplicated_sample_keeps_the_mean_loss_gradient() {
    let ens = ensemble(4, 3, 3, 2, Activation::smooth_step(1.0).unwrap(), 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x1 = normal(&mut rng, 1, 3);
    let x2 = Matrix::from_rows(&[x1.row(0).to_vec(), x1.row(0).to_vec()]).unwrap();
    let par = Parallelism::serial();
    let f1 = ens.forward(&x1, Mode::Train, &par).unwrap();
    let f2 = ens.forward(&x2, Mode::Train, &par).unwrap();
    let (_, dl1) = softmax_cross_entropy(&f1.logits, &[1]).unwrap();
    let (_, dl2) = softmax_cross_entropy(&f2.logits, &[1, 1]).unwrap();
    let g1 = ens.backward(&x1, &f1, &dl1, &par).unwrap();
    let g2 = ens.backward(&x2, &f2, &dl2, &par).unwrap();
    for (a, b) in g1.trees.iter().zip(&g2.trees) {
        rel_close(a.d_w.as_slice(), b.d_w.as_slice(), 1e-14);
        rel_close(a.d_o.as_slice(), b.d_o.as_slice(), 1e-14);
    }
}

#[test]
fn batch_order_only_permutes_results() {
    let ens = ensemble(5, 3, 4, 3, Activation::smooth_step(0.8).unwrap(), 13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = normal(&mut rng, 10, 4);
    let dl = normal(&mut rng, 10, 3);
    let perm = [3, 7, 0, 9, 1, 4, 8, 2, 6, 5];
    let xp = x.select_rows(&perm);
    let dlp = dl.select_rows(&perm);
    let par = Parallelism::serial();
    let f = ens.forward(&x, Mode::Train, &par).unwrap();
    let fp = ens.forward(&xp, Mode::Train, &par).unwrap();
    assert_eq!(fp.logits, f.logits.select_rows(&perm));
    let g = ens.backward(&x, &f, &dl, &par).unwrap();
    let gp = ens.backward(&xp, &fp, &dlp, &par).unwrap();
    assert_eq!(gp.d_x, g.d_x.select_rows(&perm));
    for (a, b) in g.trees.iter().zip(&gp.trees) {
        rel_close(a.d_w.as_slice(), b.d_w.as_slice(), 1e-13);
        rel_close(a.d_o.as_slice(), b.d_o.as_slice(), 1e-13);
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let ens = ensemble(6, 5, 6, 3, Activation::smooth_step(1.0).unwrap(), 15);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = normal(&mut rng, 40, 6);
    let dl = normal(&mut rng, 40, 3);
    let serial = Parallelism::serial();
    let pooled = Parallelism::new(4).unwrap();
    let f1 = ens.forward(&x, Mode::Train, &serial).unwrap();
    let f4 = ens.forward(&x, Mode::Train, &pooled).unwrap();
    assert_eq!(f1.logits, f4.logits);
    assert_eq!(f1.reachable_leaves, f4.reachable_leaves);
    assert_eq!(
        ens.backward(&x, &f1, &dl, &serial).unwrap(),
        ens.backward(&x, &f4, &dl, &pooled).unwrap()
    );
}

#[test]
fn l2_gradient() {
    let ens = ensemble(3, 2, 3, 2, Activation::smooth_step(1.0).unwrap(), 17);
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let x = normal(&mut rng, 4, 3);
    let dl = Matrix::zeros(4, 2);
    let par = Parallelism::serial();
    let f = ens.forward(&x, Mode::Train, &par).unwrap();
    let base = ens.backward(&x, &f, &dl, &par).unwrap();
    let mut g = base.clone();
    add_l2_gradient(&mut g, &ens, 0.0).unwrap();
    assert_eq!(g, base);
    add_l2_gradient(&mut g, &ens, 0.5).unwrap();
    for (gt, t) in g.trees.iter().zip(&ens.trees) {
        assert_eq!(gt.d_w, t.w);
    }
    assert!(add_l2_gradient(&mut g, &ens, -1.0).is_err());
    let expected: f64 = ens.trees.iter().map(|t| t.w.as_slice().iter().map(|v| v * v).sum::<f64>()).sum();
    assert!((ens.l2_penalty(2.0) - 2.0 * expected).abs() < 1e-12);
}

#[test]
fn zero_weights_reach_every_leaf() {
    let ens = Ensemble::new(6, 3, 4, 2, Activation::smooth_step(0.1).unwrap(), 0, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let x = normal(&mut rng, 7, 4);
    let f = ens.forward(&x, Mode::Infer, &Parallelism::serial()).unwrap();
    assert_eq!(f.mean_reachable_leaves(3), 64.0);
    let trained = ensemble(6, 3, 4, 2, Activation::smooth_step(0.1).unwrap(), 20);
    let r = trained.forward(&x, Mode::Infer, &Parallelism::serial()).unwrap().mean_reachable_leaves(3);
    assert!((1.0..=64.0).contains(&r));
}

#[test]
fn misuse_is_reported() {
    let ens = ensemble(3, 2, 3, 2, Activation::smooth_step(1.0).unwrap(), 21);
    let par = Parallelism::serial();
    let x = Matrix::zeros(3, 3);
    assert!(matches!(
        ens.forward(&Matrix::zeros(3, 4), Mode::Train, &par),
        Err(Error::DimensionMismatch { .. })
    ));
    let inferred = ens.forward(&x, Mode::Infer, &par).unwrap();
    assert!(inferred.traces.is_empty());
    assert!(matches!(
        ens.backward(&x, &inferred, &Matrix::zeros(3, 2), &par),
        Err(Error::MalformedTrace(_))
    ));
    let trained = ens.forward(&x, Mode::Train, &par).unwrap();
    assert!(ens.backward(&x, &trained, &Matrix::zeros(3, 3), &par).is_err());
    assert!(Ensemble::new(3, 0, 3, 2, Activation::smooth_step(1.0).unwrap(), 0, 1.0).is_err());
    let other = TreeTopology::new(4).unwrap();
    assert!(Ensemble::from_trees(other, *ens.activation(), ens.trees.clone()).is_err());
}
