mod common;

use ndarray::{Array2, Axis};

use synsem::probes::{
    default_c_grid, encode_labels, eval_accuracy, fit_probe, minimize, probe_inputs, read_probe, sweep_c,
    train_pos_probe, train_validation_split, write_probe, LbfgsOptions, LogisticObjective,
};
use synsem::tensorstore::RepresentationMatrix;
use synsem::Error;

use common::gaussian;

/// Direct transcription of the summed cross-entropy with an L2 weight penalty.
fn naive_loss(x: &Array2<f64>, labels: &[usize], k: usize, c: f64, params: &[f64]) -> f64 {
    let d = x.ncols();
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let z: Vec<f64> = (0..k)
            .map(|c| (0..d).map(|j| params[c * d + j] * x[[i, j]]).sum::<f64>() + params[k * d + c])
            .collect();
        let norm: f64 = z.iter().map(|v| v.exp()).sum();
        loss -= (z[y].exp() / norm).ln();
    }
    let penalty: f64 = params[..k * d].iter().map(|w| w * w).sum();
    if c.is_finite() {
        loss += 0.5 * penalty / c;
    }
    loss
}

/// Blobs around `k` well separated class means.
fn blobs(n_per: usize, k: usize, d: usize, spread: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let means = gaussian(k, d, seed) * 4.0;
    let noise = gaussian(n_per * k, d, seed ^ 0x55) * spread;
    let labels: Vec<usize> = (0..n_per * k).map(|i| i % k).collect();
    let mut x = noise;
    for (mut row, &l) in x.axis_iter_mut(Axis(0)).zip(&labels) {
        row += &means.row(l);
    }
    (x, labels)
}

#[test]
fn objective_matches_the_oracle_and_finite_differences() {
    for (k, d, c, seed) in [(2, 3, f64::INFINITY, 1u64), (5, 4, 0.3, 2), (3, 7, 10.0, 3), (4, 1, 1e-2, 4)] {
        let x = gaussian(12, d, seed);
        let labels: Vec<usize> = (0..12).map(|i| (i * 7) % k).collect();
        let obj = LogisticObjective::new(x.view(), &labels, k, c).unwrap();
        assert_eq!(obj.n_params(), k * (d + 1));
        let params: Vec<f64> = gaussian(1, obj.n_params(), seed + 100).into_iter().collect();
        let mut grad = vec![0.0; obj.n_params()];
        let loss = obj.evaluate(&params, &mut grad);
        let oracle = naive_loss(&x, &labels, k, c, &params);
        assert!((loss - oracle).abs() <= 1e-10 * oracle.abs().max(1.0), "{loss} vs {oracle}");

        let h = 1e-6;
        let mut scratch = vec![0.0; obj.n_params()];
        for p in 0..obj.n_params() {
            let mut up = params.clone();
            let mut down = params.clone();
            up[p] += h;
            down[p] -= h;
            let fd = (obj.evaluate(&up, &mut scratch) - obj.evaluate(&down, &mut scratch)) / (2.0 * h);
            assert!((fd - grad[p]).abs() <= 1e-6 * fd.abs().max(1.0), "k={k} d={d} C={c} param {p}: {fd} vs {}", grad[p]);
        }
    }
}

#[test]
fn objective_rejects_bad_inputs() {
    let x = gaussian(4, 2, 1);
    assert!(LogisticObjective::new(x.view(), &[0, 1, 0, 1], 2, 0.0).is_err());
    assert!(LogisticObjective::new(x.view(), &[0, 1, 0, 1], 2, -1.0).is_err());
    assert!(LogisticObjective::new(x.view(), &[0, 1, 0], 2, 1.0).is_err());
    assert!(LogisticObjective::new(x.view(), &[0, 1, 0, 2], 2, 1.0).is_err());
}

#[test]
fn lbfgs_solves_rosenbrock() {
    let out = minimize(
        |p, g| {
            let (x, y) = (p[0], p[1]);
            g[0] = -2.0 * (1.0 - x) - 400.0 * x * (y - x * x);
            g[1] = 200.0 * (y - x * x);
            (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
        },
        vec![-1.2, 1.0],
        &LbfgsOptions { grad_tol: 1e-10, ..LbfgsOptions::default() },
    );
    assert!(out.converged);
    assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6, "{:?}", out.x);
}

#[test]
fn separable_classes_are_learned() {
    let (x, labels) = blobs(20, 4, 6, 0.3, 9);
    let train = RepresentationMatrix::from_rows(x);
    let model = train_pos_probe(&train, &labels, 1.0, &LbfgsOptions::default()).unwrap();
    assert!(model.stats.converged);
    assert_eq!((model.n_classes(), model.dim()), (4, 6));
    assert_eq!(eval_accuracy(&model, &train, &labels).unwrap(), 1.0);

    let (xt, lt) = blobs(10, 4, 6, 0.3, 9);
    let test = RepresentationMatrix::from_rows(xt);
    assert_eq!(eval_accuracy(&model, &test, &lt).unwrap(), 1.0);

    // training is deterministic
    let again = train_pos_probe(&train, &labels, 1.0, &LbfgsOptions::default()).unwrap();
    assert_eq!(again, model);
}

#[test]
fn stronger_regularization_shrinks_weights() {
    let (x, labels) = blobs(15, 3, 5, 0.5, 4);
    let train = RepresentationMatrix::from_rows(x);
    let norm = |c: f64| {
        let m = fit_probe(&train, &labels, c, &LbfgsOptions::default()).unwrap();
        m.weights.iter().map(|w| w * w).sum::<f64>()
    };
    let (tight, mid, loose) = (norm(1e-3), norm(1e-1), norm(10.0));
    assert!(tight < mid && mid < loose, "{tight} {mid} {loose}");
}

#[test]
fn non_convergence_is_reported() {
    let (x, labels) = blobs(10, 3, 4, 1.0, 2);
    let train = RepresentationMatrix::from_rows(x);
    let opts = LbfgsOptions { max_iter: 1, ..LbfgsOptions::default() };
    let err = train_pos_probe(&train, &labels, f64::INFINITY, &opts).unwrap_err();
    assert!(matches!(err, Error::NotConverged { iterations: 1, .. }), "{err}");
    let partial = fit_probe(&train, &labels, f64::INFINITY, &opts).unwrap();
    assert!(!partial.stats.converged);
}

#[test]
fn class_bookkeeping() {
    let train = RepresentationMatrix::from_rows(gaussian(4, 2, 1));
    assert!(fit_probe(&train, &[0, 0, 0, 0], 1.0, &LbfgsOptions::default()).is_err());
    // class 1 is never seen
    assert!(fit_probe(&train, &[0, 2, 0, 2], 1.0, &LbfgsOptions::default()).is_err());

    let (classes, a, b) = encode_labels(&["VBD", "NN", "VBD", "JJ"], &["NN", "RB"]);
    assert_eq!(classes, vec!["JJ", "NN", "VBD"]);
    assert_eq!(a, vec![2, 1, 2, 0]);
    assert_eq!(b, vec![1, usize::MAX]);
}

#[test]
fn split_and_sweep() {
    let (train, val) = train_validation_split(48, 13);
    assert_eq!((train.len(), val.len()), (39, 9));
    let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..48).collect::<Vec<_>>());
    assert_eq!(train_validation_split(48, 13), (train, val));
    assert_ne!(train_validation_split(48, 14).1, train_validation_split(48, 13).1);

    let grid = default_c_grid();
    assert_eq!(grid.len(), 9);
    assert_eq!(grid[0], 1e-3);
    assert!(grid[8].is_infinite());

    // every C separates these blobs, so the smallest wins the tie
    let (x, labels) = blobs(12, 3, 4, 0.1, 6);
    let (xv, lv) = blobs(4, 3, 4, 0.1, 6);
    let sweep = sweep_c(
        &RepresentationMatrix::from_rows(x),
        &labels,
        &RepresentationMatrix::from_rows(xv),
        &lv,
        &[10.0, 1.0, f64::INFINITY],
        &LbfgsOptions::default(),
    )
    .unwrap();
    assert_eq!(sweep.best_c, 1.0);
    assert!(sweep.accuracies.iter().all(|(_, a)| *a == 1.0));
}

#[test]
fn probe_inputs_are_centered_unit_rows() {
    let m = RepresentationMatrix::from_rows(gaussian(10, 5, 3) + 7.0);
    let p = probe_inputs(&m).unwrap();
    for row in p.data.axis_iter(Axis(0)) {
        assert!((row.dot(&row) - 1.0).abs() < 1e-12);
    }
    // centering happens before normalization, so the offset is gone
    let q = probe_inputs(&RepresentationMatrix::from_rows(gaussian(10, 5, 3))).unwrap();
    assert!((&p.data - &q.data).iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn saved_probes_round_trip_at_f32() {
    let tmp = tempfile::tempdir().unwrap();
    let (x, labels) = blobs(10, 3, 4, 0.2, 8);
    let train = RepresentationMatrix::from_rows(x);
    let model = train_pos_probe(&train, &labels, 0.5, &LbfgsOptions::default())
        .unwrap()
        .with_classes(vec!["A".into(), "B".into(), "C".into()]);
    write_probe(&model, tmp.path(), "layer3").unwrap();
    let back = read_probe(tmp.path(), "layer3").unwrap();
    assert_eq!(back.classes, model.classes);
    assert_eq!(back.c, 0.5);
    assert_eq!(back.stats, model.stats);
    for (a, b) in back.weights.iter().zip(model.weights.iter()) {
        assert_eq!(*a, *b as f32 as f64);
    }
    assert_eq!(
        back.predict(train.data.view()).unwrap(),
        model.predict(train.data.view()).unwrap()
    );
    assert!(read_probe(tmp.path(), "missing").is_err());
}
