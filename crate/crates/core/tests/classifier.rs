use rand::Rng as _;
use rsift::classifier::{
    balanced_batches, preprocess, train_cv, Adam, AdamParams, Architecture, BatchDropout, Block, Dropout, Model,
    TrainConfig,
};
use rsift::rng::rng_for;
use rsift::tractogram::{resample, NormalizationRecord, Point, Streamline};

fn small_arch(outputs: usize) -> Architecture {
    Architecture {
        input_len: 66,
        conv1_filters: 4,
        conv1_kernel: 5,
        conv2_filters: 5,
        conv2_kernel: 3,
        dense_units: 8,
        outputs,
    }
}

/// Largest relative deviation between backprop and central differences.
fn max_gradient_error(arch: Architecture, seed: u64) -> f64 {
    let mut rng = rng_for(seed, &[]);
    let mut model = Model::init(arch, &mut rng).unwrap();
    for b in [Block::Conv1Bias, Block::Conv2Bias, Block::DenseBias, Block::OutputBias] {
        for w in model.block_mut(b) {
            *w = rng.gen_range(-0.1..0.1);
        }
    }
    let batch = 3;
    let xs: Vec<Vec<f64>> = (0..batch).map(|_| (0..arch.input_len).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let ys: Vec<usize> = (0..batch).map(|i| i % arch.n_classes()).collect();
    let masks: Vec<Vec<bool>> = (0..batch).map(|_| (0..arch.dense_units).map(|_| rng.gen_bool(0.5)).collect()).collect();
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let (_, grad) = model.loss_and_grad(&refs, &ys, BatchDropout::Masks(&masks)).unwrap();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..grad.len() {
        let orig = model.params()[i];
        model.params_mut()[i] = orig + h;
        let (lp, _) = model.loss_and_grad(&refs, &ys, BatchDropout::Masks(&masks)).unwrap();
        model.params_mut()[i] = orig - h;
        let (lm, _) = model.loss_and_grad(&refs, &ys, BatchDropout::Masks(&masks)).unwrap();
        model.params_mut()[i] = orig;
        let numeric = (lp - lm) / (2.0 * h);
        let scale = grad[i].abs().max(numeric.abs()).max(1e-7);
        worst = worst.max((grad[i] - numeric).abs() / scale);
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..10 {
        for outputs in [1, 3] {
            let err = max_gradient_error(small_arch(outputs), seed);
            assert!(err < 1e-4, "seed {seed}, outputs {outputs}: relative error {err:e}");
        }
    }
}

#[test]
fn tiny_model_trace_by_hand() {
    let arch = Architecture {
        input_len: 12,
        conv1_filters: 1,
        conv1_kernel: 5,
        conv2_filters: 1,
        conv2_kernel: 3,
        dense_units: 1,
        outputs: 1,
    };
    let mut m = Model::zeros(arch).unwrap();
    m.block_mut(Block::Conv1Weight).copy_from_slice(&[1.0, 0.0, -1.0, 0.5, 0.0]);
    m.block_mut(Block::Conv1Bias)[0] = 0.1;
    m.block_mut(Block::Conv2Weight).copy_from_slice(&[1.0, -0.5, 2.0]);
    m.block_mut(Block::Conv2Bias)[0] = -0.2;
    m.block_mut(Block::DenseWeight)[0] = 1.5;
    m.block_mut(Block::DenseBias)[0] = 0.05;
    m.block_mut(Block::OutputWeight)[0] = -2.0;
    m.block_mut(Block::OutputBias)[0] = 0.3;
    let x = [0.0, 1.0, 2.0, 3.0, 2.0, 1.0, 0.0, -1.0, -2.0, -1.0, 0.0, 1.0];

    // conv1 (8 outputs): x[t] - x[t+2] + 0.5 x[t+3] + 0.1
    //   t=0: 0-2+1.5+.1=-0.4  t=1: 1-3+1+.1=-0.9  t=2: 2-2+.5+.1=0.6  t=3: 3-1+0+.1=2.1
    //   t=4: 2-0-.5+.1=1.6    t=5: 1+1-1+.1=1.1   t=6: 0+2-.5+.1=1.6 t=7: -1+1+0+.1=0.1
    // relu+pool: [0, 2.1, 1.6, 1.6]
    // conv2 (2 outputs): p[t] - .5 p[t+1] + 2 p[t+2] - .2
    //   t=0: 0-1.05+3.2-.2=1.95   t=1: 2.1-.8+3.2-.2=4.3
    // relu+pool: [4.3]; dense: 1.5*4.3+.05=6.5; logit: -13+.3=-12.7
    let act = m.forward(&x, Dropout::Off).unwrap();
    assert!((act.dense[0] - 6.5).abs() < 1e-12);
    assert!((act.logits[0] + 12.7).abs() < 1e-12);
    let expected = 1.0 / (1.0 + 12.7f64.exp());
    assert!((act.output[0] - expected).abs() < 1e-12);
}

#[test]
fn saturated_correct_batch_has_vanishing_gradient() {
    let mut rng = rng_for(11, &[]);
    let mut m = Model::init(Architecture::streamline(1), &mut rng).unwrap();
    m.block_mut(Block::OutputWeight).iter_mut().for_each(|w| *w = 0.0);
    m.block_mut(Block::OutputBias)[0] = 40.0;
    let xs: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 8.0; 66]).collect();
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let (loss, grad) = m.loss_and_grad(&refs, &[1; 8], BatchDropout::Off).unwrap();
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    assert!(loss < 1e-12);
    assert!(norm < 1e-6, "{norm}");
}

#[test]
fn duplicated_batch_has_same_gradient() {
    let mut rng = rng_for(12, &[]);
    let m = Model::init(Architecture::streamline(3), &mut rng).unwrap();
    let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..66).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let ys = [0, 1, 2, 1];
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let doubled: Vec<&[f64]> = refs.iter().chain(refs.iter()).copied().collect();
    let ys2: Vec<usize> = ys.iter().chain(ys.iter()).copied().collect();
    let (l1, g1) = m.loss_and_grad(&refs, &ys, BatchDropout::Off).unwrap();
    let (l2, g2) = m.loss_and_grad(&doubled, &ys2, BatchDropout::Off).unwrap();
    assert!((l1 - l2).abs() < 1e-12);
    for (a, b) in g1.iter().zip(&g2) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

#[test]
fn dropout_mean_matches_eval() {
    let mut rng = rng_for(13, &[]);
    let m = Model::init(Architecture::streamline(1), &mut rng).unwrap();
    let x: Vec<f64> = (0..66).map(|i| (i as f64 * 0.37).sin()).collect();
    let eval = m.forward(&x, Dropout::Off).unwrap();
    let draws = 10_000;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..draws {
        let z = m.forward(&x, Dropout::Sample(&mut rng)).unwrap().logits[0];
        sum += z;
        sum_sq += z * z;
    }
    let mean = sum / draws as f64;
    let sd = (sum_sq / draws as f64 - mean * mean).sqrt();
    let bound = 3.0 * sd / (draws as f64).sqrt();
    assert!((mean - eval.logits[0]).abs() < bound, "{mean} vs {} (3σ {bound})", eval.logits[0]);
}

#[test]
fn adam_minimizes_quadratic() {
    // f(x) = (x - 3)^2 from x = 0 with lr 0.1.
    let mut adam = Adam::new(1, AdamParams { lr: 0.1, ..AdamParams::default() });
    let mut x = [0.0];
    for _ in 0..200 {
        let g = [2.0 * (x[0] - 3.0)];
        adam.step(&mut x, &g).unwrap();
    }
    assert!((x[0] - 3.0).abs() < 1e-2, "{}", x[0]);
}

#[test]
fn balanced_stream_recount() {
    let mut rng = rng_for(14, &[]);
    let labels: Vec<usize> = (0..230).map(|i| if i < 150 { 0 } else if i < 210 { 1 } else { 2 }).collect();
    let batches = balanced_batches(&labels, 3, 60, &mut rng).unwrap();
    let mut seen = vec![0usize; 230];
    for b in &batches {
        for &i in b {
            seen[i] += 1;
        }
    }
    assert!(seen[..150].iter().all(|&c| c == 1));
    // 150 draws from 60 samples: two full passes and 30 from a third.
    let ones: Vec<usize> = seen[150..210].to_vec();
    assert_eq!(ones.iter().sum::<usize>(), 150);
    assert!(ones.iter().all(|&c| c == 2 || c == 3));
    assert_eq!(ones.iter().filter(|&&c| c == 3).count(), 30);
    // 150 draws from 20 samples: seven passes and 10 from an eighth.
    let twos: Vec<usize> = seen[210..].to_vec();
    assert_eq!(twos.iter().filter(|&&c| c == 8).count(), 10);
    assert_eq!(twos.iter().filter(|&&c| c == 7).count(), 10);
}

fn toy_streamline(rng: &mut rsift::rng::Rng, rotated: bool) -> Streamline {
    let o = Point::new(rng.gen_range(20.0..30.0), rng.gen_range(20.0..30.0), rng.gen_range(20.0..30.0));
    let len = rng.gen_range(15.0..25.0);
    let pts: Vec<Point> = (0..30)
        .map(|i| {
            let t = i as f64 / 29.0 * len;
            let wobble = rng.gen_range(-0.3..0.3);
            if rotated {
                Point::new(o.x + wobble, o.y + t, o.z + wobble)
            } else {
                Point::new(o.x + t, o.y + wobble, o.z + wobble)
            }
        })
        .collect();
    Streamline::new(pts).unwrap()
}

#[test]
fn separable_toy_reaches_high_fold_accuracy() {
    let mut rng = rng_for(15, &[]);
    let mut streamlines = Vec::new();
    let mut labels = Vec::new();
    for i in 0..400 {
        let rotated = i % 3 == 0;
        streamlines.push(toy_streamline(&mut rng, rotated));
        labels.push(usize::from(!rotated));
    }
    let record = NormalizationRecord::from_streamlines(&streamlines).unwrap();
    let features: Vec<Vec<f64>> = streamlines.iter().map(|s| preprocess(s, &record, 22).unwrap()).collect();

    // Nearest-centroid baseline on the same features.
    let centroid = |c: usize| {
        let members: Vec<&Vec<f64>> = features.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(f, _)| f).collect();
        (0..66).map(|j| members.iter().map(|f| f[j]).sum::<f64>() / members.len() as f64).collect::<Vec<f64>>()
    };
    let (c0, c1) = (centroid(0), centroid(1));
    let dist = |f: &[f64], c: &[f64]| f.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let baseline = features
        .iter()
        .zip(&labels)
        .filter(|(f, &l)| usize::from(dist(f, &c1) < dist(f, &c0)) == l)
        .count() as f64
        / features.len() as f64;
    assert!(baseline >= 0.95, "baseline {baseline}");

    let config = TrainConfig { seed: 3, ..TrainConfig::default() };
    let cv = train_cv(&features, &labels, 2, &config).unwrap();
    for (i, f) in cv.folds.iter().enumerate() {
        assert!(f.metrics.accuracy >= 0.95, "fold {i}: {:?}", f.metrics);
    }
    let mut seen = vec![0; features.len()];
    for &f in &cv.fold_of {
        seen[f] += 1;
    }
    assert_eq!(seen.iter().take(5).sum::<usize>(), 400);
}

#[test]
fn training_is_bit_reproducible() {
    let mut rng = rng_for(16, &[]);
    let features: Vec<Vec<f64>> = (0..60).map(|_| (0..66).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let labels: Vec<usize> = (0..60).map(|i| usize::from(i % 4 == 0)).collect();
    let config = TrainConfig { epochs: 2, dense_units: 16, ..TrainConfig::default() };
    let a = rsift::classifier::train(&features, &labels, 2, &config, &mut rng_for(1, &[])).unwrap();
    let b = rsift::classifier::train(&features, &labels, 2, &config, &mut rng_for(1, &[])).unwrap();
    assert_eq!(a.model.params(), b.model.params());
}

#[test]
fn translation_changes_features() {
    let s = Streamline::from_coords(&[[1.0, 1.0, 1.0], [5.0, 2.0, 1.0], [9.0, 6.0, 3.0]]).unwrap();
    let shifted = s.map_points(|p| Point::new(p.x + 2.0, p.y, p.z)).unwrap();
    let record = NormalizationRecord { min: [0.0; 3], max: [20.0; 3] };
    let a = preprocess(&s, &record, 22).unwrap();
    let b = preprocess(&shifted, &record, 22).unwrap();
    // Independent pipeline: resample, then map [0, 20] onto [-1, 1].
    let r = resample(&s, 22).unwrap();
    for (i, p) in r.points().iter().enumerate() {
        for axis in 0..3 {
            assert!((a[3 * i + axis] - (p[axis] / 10.0 - 1.0)).abs() < 1e-12);
        }
        assert!((b[3 * i] - a[3 * i] - 0.2).abs() < 1e-12);
    }
    assert_ne!(a, b);
}
