use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satweight::nn::{train, FeatureMatrix, LstmModel, Sample, TrainConfig};

/// Straightforward re-implementation of the stacked LSTM from the documented
/// parameter layout.
fn reference_forward(model: &LstmModel, fm: &FeatureMatrix) -> Vec<f64> {
    let p = model.params();
    let h = model.hidden();
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut inputs: Vec<DVector<f64>> = (0..fm.rows()).map(|t| DVector::from_column_slice(fm.row(t))).collect();
    let mut off = 0;
    for l in 0..model.layers() {
        let d = if l == 0 { model.input_width() } else { h };
        let w = DMatrix::from_row_slice(4 * h, d, &p[off..off + 4 * h * d]);
        off += 4 * h * d;
        let u = DMatrix::from_row_slice(4 * h, h, &p[off..off + 4 * h * h]);
        off += 4 * h * h;
        let b = DVector::from_column_slice(&p[off..off + 4 * h]);
        off += 4 * h;
        let mut hs = DVector::zeros(h);
        let mut cs = DVector::zeros(h);
        let mut out = Vec::new();
        for x in &inputs {
            let z = &w * x + &u * &hs + &b;
            let i = z.rows(0, h).map(sig);
            let f = z.rows(h, h).map(sig);
            let g = z.rows(2 * h, h).map(f64::tanh);
            let o = z.rows(3 * h, h).map(sig);
            cs = f.component_mul(&cs) + i.component_mul(&g);
            hs = o.component_mul(&cs.map(f64::tanh));
            out.push(hs.clone());
        }
        inputs = out;
    }
    let head = DVector::from_column_slice(&p[off..off + h]);
    let bias = p[off + h];
    inputs.iter().map(|hs| head.dot(hs) + bias).collect()
}

fn random_fm(rng: &mut ChaCha8Rng, rows: usize, width: usize) -> FeatureMatrix {
    FeatureMatrix::new(rows, width, (0..rows * width).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

#[test]
fn forward_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (width, hidden, layers) in [(14, 8, 2), (8, 5, 2), (3, 4, 1), (6, 3, 3)] {
        let mut model = LstmModel::init(width, hidden, layers, &mut rng);
        for v in model.params_mut() {
            *v *= 2.0;
        }
        for rows in [1, 2, 7, 25] {
            let fm = random_fm(&mut rng, rows, width);
            let got = model.forward(&fm).unwrap();
            let want = reference_forward(&model, &fm);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn zero_model_outputs_the_head_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut model = LstmModel::zeros(14, 16, 2);
    assert!(model.forward(&random_fm(&mut rng, 9, 14)).unwrap().iter().all(|y| *y == 0.0));
    model.set_head_bias(0.7);
    assert!(model.forward(&random_fm(&mut rng, 1, 14)).unwrap() == vec![0.7]);
}

#[test]
fn masked_rows_do_not_contribute() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = LstmModel::init(4, 5, 2, &mut rng);
    let fm = random_fm(&mut rng, 6, 4);
    let targets: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mask = [true, false, true, true, false, true];
    let (loss, grad) = model.loss_and_gradient(&fm, &targets, Some(&mask)).unwrap();
    let mut moved = targets.clone();
    moved[1] += 100.0;
    moved[4] -= 100.0;
    let (loss2, grad2) = model.loss_and_gradient(&fm, &moved, Some(&mask)).unwrap();
    assert_eq!(loss, loss2);
    assert_eq!(grad, grad2);

    let out = model.forward(&fm).unwrap();
    let (zero, g0) = model.loss_and_gradient(&fm, &out, None).unwrap();
    assert_eq!(zero, 0.0);
    assert!(g0.iter().all(|g| g.abs() < 1e-12));
}

#[test]
fn leaked_label_is_learned() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut make = |count: usize| -> Vec<Sample> {
        (0..count)
            .map(|_| {
                let rows = rng.random_range(4..12);
                let mut data = Vec::with_capacity(rows * 4);
                let mut targets = Vec::with_capacity(rows);
                for _ in 0..rows {
                    let t: f64 = rng.random_range(-1.0..1.0);
                    targets.push(t);
                    data.extend([t, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
                }
                Sample {
                    features: FeatureMatrix::new(rows, 4, data).unwrap(),
                    targets,
                }
            })
            .collect()
    };
    let tr = make(200);
    let va = make(50);
    let cfg = TrainConfig {
        hidden: 16,
        max_epochs: 50,
        patience: 50,
        learning_rate: 1e-2,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let (_, report, _) = train(&tr, &va, &cfg).unwrap();
    assert!(report.history.len() <= 50);
    assert!(report.best_val_loss < 1e-3, "validation loss {}", report.best_val_loss);
}
