// Finite-difference checks of every differentiable op and of the composite
// networks and losses, all in f64.

use dfl_core::autodiff::gradcheck::{check_inputs, check_params, GradCheckReport};
use dfl_core::autodiff::{Conv2dSpec, Graph, ParamStore, Tensor, Var};
use dfl_core::enhance::{CanConfig, EdnConfig, Enhancer, EnhancerConfig, ForwardOpts, TseMode};
use dfl_core::loss::{combined_loss, deep_feature_loss, feature_loss};
use dfl_core::speaker::{AngularMargin, AuxModel, AuxNetConfig, Lde, LDE_EPS};
use dfl_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(shape: &[usize], lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| r.random_range(lo..hi))
}

/// Values bounded away from zero so kinks sit far from the probe points.
fn off_zero(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = r.random_range(0.1..1.0);
        if r.random_bool(0.5) { m } else { -m }
    })
}

/// `sum(y * w)` for a fixed pseudo-random `w`, so no output is left unweighted.
fn project(g: &mut Graph<f64>, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let w = Tensor::from_fn(shape, |i| ((i * 7919 % 23) as f64 - 11.0) / 7.0);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn randomize(store: &mut ParamStore<f64>, r: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        let shape = store.entry(id).value.shape().to_vec();
        store.entry_mut(id).value = uniform(&shape, -0.6, 0.6, r);
    }
}

type Case = (&'static str, Box<dyn Fn() -> Result<GradCheckReport>>);

fn unary(name: &'static str, seed: u64, f: fn(&mut Graph<f64>, Var) -> Var) -> Case {
    (
        name,
        Box::new(move || {
            let x = off_zero(&[3, 4], &mut rng(seed));
            check_inputs(&[x], STEP, |g, v| {
                let y = f(g, v[0]);
                project(g, y)
            })
        }),
    )
}

fn binary(name: &'static str, seed: u64, f: fn(&mut Graph<f64>, Var, Var) -> Result<Var>) -> Case {
    (
        name,
        Box::new(move || {
            let mut r = rng(seed);
            let (a, b) = (off_zero(&[2, 5], &mut r), off_zero(&[2, 5], &mut r));
            check_inputs(&[a, b], STEP, |g, v| {
                let y = f(g, v[0], v[1])?;
                project(g, y)
            })
        }),
    )
}

fn primitive_cases() -> Vec<Case> {
    let mut cases: Vec<Case> = vec![
        binary("add", 1, |g, a, b| g.add(a, b)),
        binary("sub", 2, |g, a, b| g.sub(a, b)),
        binary("mul", 3, |g, a, b| g.mul(a, b)),
        binary("l1_distance", 4, |g, a, b| g.l1_distance(a, b)),
        unary("mul_scalar", 5, |g, x| g.mul_scalar(x, -1.7)),
        unary("add_scalar", 6, |g, x| g.add_scalar(x, 0.3)),
        unary("leaky_relu", 7, |g, x| g.leaky_relu(x, 0.2)),
        unary("relu", 8, |g, x| g.relu(x)),
        unary("sigmoid", 9, |g, x| g.sigmoid(x)),
        unary("swish", 10, |g, x| g.swish(x)),
        unary("exp", 11, |g, x| g.exp(x)),
        unary("abs", 12, |g, x| g.abs(x)),
        unary("sum", 13, |g, x| g.sum(x)),
        unary("mean", 14, |g, x| g.mean(x)),
        unary("mean_last", 15, |g, x| g.mean_last(x)),
        unary("log_mask", 16, |g, x| g.log_mask(x, 1e-6)),
    ];
    cases.push((
        "ln",
        Box::new(|| {
            let x = uniform(&[3, 4], 0.2, 3.0, &mut rng(17));
            check_inputs(&[x], STEP, |g, v| {
                let y = g.ln(v[0]);
                project(g, y)
            })
        }),
    ));
    cases.push((
        "scale_by",
        Box::new(|| {
            let mut r = rng(18);
            let (x, s) = (off_zero(&[2, 3], &mut r), off_zero(&[1], &mut r));
            check_inputs(&[x, s], STEP, |g, v| {
                let y = g.scale_by(v[0], v[1])?;
                project(g, y)
            })
        }),
    ));
    cases.push((
        "reshape",
        Box::new(|| {
            let x = off_zero(&[2, 6], &mut rng(19));
            check_inputs(&[x], STEP, |g, v| {
                let y = g.reshape(v[0], vec![3, 4])?;
                project(g, y)
            })
        }),
    ));
    for (name, seed, mul) in [("sub_last", 20u64, false), ("mul_last", 21, true)] {
        cases.push((
            name,
            Box::new(move || {
                let mut r = rng(seed);
                let (x, m) = (off_zero(&[2, 3, 4], &mut r), off_zero(&[2, 3, 1], &mut r));
                check_inputs(&[x, m], STEP, |g, v| {
                    let y = if mul { g.mul_last(v[0], v[1])? } else { g.sub_last(v[0], v[1])? };
                    project(g, y)
                })
            }),
        ));
    }
    let conv_specs = [
        ("conv2d same", Conv2dSpec::same((3, 3), (1, 1)), (3, 3)),
        ("conv2d dilated", Conv2dSpec::same((3, 3), (2, 3)), (3, 3)),
        ("conv2d strided", Conv2dSpec { stride: (2, 2), dilation: (1, 1), padding: (1, 0) }, (3, 2)),
    ];
    for (i, (name, spec, k)) in conv_specs.into_iter().enumerate() {
        cases.push((
            name,
            Box::new(move || {
                let mut r = rng(30 + i as u64);
                let x = off_zero(&[2, 2, 6, 7], &mut r);
                let w = off_zero(&[3, 2, k.0, k.1], &mut r);
                check_inputs(&[x, w], STEP, |g, v| {
                    let y = g.conv2d(v[0], v[1], spec)?;
                    project(g, y)
                })
            }),
        ));
    }
    cases.push((
        "add_channel_bias",
        Box::new(|| {
            let mut r = rng(40);
            let (x, b) = (off_zero(&[2, 3, 2, 2], &mut r), off_zero(&[3], &mut r));
            check_inputs(&[x, b], STEP, |g, v| {
                let y = g.add_channel_bias(v[0], v[1])?;
                project(g, y)
            })
        }),
    ));
    cases.push((
        "upsample_nearest",
        Box::new(|| {
            let x = off_zero(&[1, 2, 2, 3], &mut rng(41));
            check_inputs(&[x], STEP, |g, v| {
                let y = g.upsample_nearest(v[0], (2, 1))?;
                project(g, y)
            })
        }),
    ));
    cases.push((
        "matmul",
        Box::new(|| {
            let mut r = rng(42);
            let (a, b) = (off_zero(&[3, 4], &mut r), off_zero(&[4, 2], &mut r));
            check_inputs(&[a, b], STEP, |g, v| {
                let y = g.matmul(v[0], v[1])?;
                project(g, y)
            })
        }),
    ));
    cases.push((
        "add_row_bias",
        Box::new(|| {
            let mut r = rng(43);
            let (x, b) = (off_zero(&[3, 4], &mut r), off_zero(&[4], &mut r));
            check_inputs(&[x, b], STEP, |g, v| {
                let y = g.add_row_bias(v[0], v[1])?;
                project(g, y)
            })
        }),
    ));
    cases.push((
        "transpose_last2",
        Box::new(|| {
            let x = off_zero(&[2, 3, 4], &mut rng(44));
            check_inputs(&[x], STEP, |g, v| {
                let y = g.transpose_last2(v[0])?;
                project(g, y)
            })
        }),
    ));
    cases.push((
        "batch_norm_train",
        Box::new(|| {
            let mut r = rng(45);
            let x = off_zero(&[3, 2, 2, 3], &mut r);
            let (gm, bt) = (uniform(&[2], 0.5, 1.5, &mut r), off_zero(&[2], &mut r));
            check_inputs(&[x, gm, bt], STEP, |g, v| {
                let (y, _, _) = g.batch_norm_train(v[0], v[1], v[2])?;
                project(g, y)
            })
        }),
    ));
    cases.push((
        "batch_norm_eval",
        Box::new(|| {
            let mut r = rng(46);
            let x = off_zero(&[3, 2, 2, 3], &mut r);
            let (gm, bt) = (uniform(&[2], 0.5, 1.5, &mut r), off_zero(&[2], &mut r));
            check_inputs(&[x, gm, bt], STEP, |g, v| {
                let y = g.batch_norm_eval(v[0], v[1], v[2], &[0.3, -0.2], &[1.4, 0.7])?;
                project(g, y)
            })
        }),
    ));
    cases.push((
        "l2_normalize_rows",
        Box::new(|| {
            let x = off_zero(&[3, 4], &mut rng(47));
            check_inputs(&[x], STEP, |g, v| {
                let y = g.l2_normalize_rows(v[0])?;
                project(g, y)
            })
        }),
    ));
    cases
}

fn composite_cases() -> Vec<Case> {
    let mut cases: Vec<Case> = Vec::new();
    cases.push((
        "lde_pool",
        Box::new(|| {
            let mut r = rng(50);
            let inputs = [
                off_zero(&[2, 4, 3], &mut r),
                off_zero(&[3, 3], &mut r),
                uniform(&[3], 0.3, 1.5, &mut r),
                off_zero(&[3], &mut r),
            ];
            check_inputs(&inputs, STEP, |g, v| {
                let y = g.lde_pool(v[0], v[1], v[2], v[3], LDE_EPS)?;
                project(g, y)
            })
        }),
    ));
    cases.push((
        "lde layer parameters",
        Box::new(|| {
            let mut r = rng(51);
            let mut store = ParamStore::new();
            let lde = Lde::new(&mut store, "lde", 3, 4, &mut r);
            randomize(&mut store, &mut r);
            let x = off_zero(&[2, 5, 4], &mut r);
            check_params(&mut store, STEP, |g, st| {
                let xv = g.constant(x.clone());
                let y = lde.forward(g, st, xv)?;
                project(g, y)
            })
        }),
    ));
    for (i, (m, lambda)) in [(1u32, 0.0), (2, 0.0), (2, 5.0), (3, 1.0)].into_iter().enumerate() {
        cases.push((
            ["angular softmax m=1", "angular softmax m=2", "angular softmax m=2 annealed", "angular softmax m=3"][i],
            Box::new(move || {
                let mut r = rng(60 + i as u64);
                let (x, w) = (off_zero(&[5, 4], &mut r), off_zero(&[3, 4], &mut r));
                let margin = AngularMargin { m, lambda, scale: 4.0 };
                check_inputs(&[x, w], STEP, |g, v| {
                    let cos = g.cosine_matrix(v[0], v[1])?;
                    g.angular_margin_ce(cos, &[0, 1, 2, 1, 0], margin)
                })
            }),
        ));
    }
    for (name, mode) in [("mini CAN", TseMode::Broadcast), ("mini CAN per-frame TSE", TseMode::PerFrame)] {
        cases.push((
            name,
            Box::new(move || {
                let cfg = CanConfig { n_bands: 6, tse_mode: mode, tse_reduction: 2, ..CanConfig::scaled(2, 4) };
                mini_enhancer(EnhancerConfig::Can(cfg), [2, 1, 6, 9], 70)
            }),
        ));
    }
    cases.push((
        "mini EDN",
        Box::new(|| {
            let cfg = EdnConfig {
                channels: 2,
                down_stages: 1,
                res_blocks: 1,
                in_kernel: (3, 3),
                out_kernel: (3, 3),
                resample_time_dilation: 1,
                n_bands: 4,
            };
            mini_enhancer(EnhancerConfig::Edn(cfg), [2, 1, 4, 6], 71)
        }),
    ));
    cases
}

/// Parameter and input gradients of a small enhancer with every weight
/// randomized, trained-mode batch norm included.
fn mini_enhancer(cfg: EnhancerConfig, shape: [usize; 4], seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let enh = Enhancer::<f64>::build(&cfg, seed)?;
    let mut store = enh.store.clone();
    randomize(&mut store, &mut r);
    let x = off_zero(&shape, &mut r);
    let xp = x.clone();
    let params = check_params(&mut store, STEP, |g, st| {
        let xv = g.constant(xp.clone());
        let y = enh.forward_with(g, st, xv, ForwardOpts::train())?;
        project(g, y)
    })?;
    let inputs = check_inputs(&[x], STEP, |g, v| {
        let y = enh.forward_with(g, &store, v[0], ForwardOpts::train())?;
        project(g, y)
    })?;
    Ok(params.merge(inputs))
}

fn tiny_aux(seed: u64) -> Result<AuxModel<f64>> {
    let cfg = AuxNetConfig {
        stem_channels: 2,
        widths: vec![2, 2, 3, 3],
        blocks_per_stage: 1,
        strides: vec![(1, 1), (2, 1), (2, 2), (1, 1)],
        lde_components: 2,
        embed_dim: 3,
        n_speakers: 3,
        margin: 2,
        n_bands: 8,
    };
    let mut m = AuxModel::build(&cfg, seed)?;
    randomize(&mut m.store, &mut rng(seed + 1));
    m.store.freeze();
    Ok(m)
}

fn loss_cases() -> Vec<Case> {
    let shape = [2, 1, 8, 6];
    vec![
        (
            "feature loss",
            Box::new(move || {
                let mut r = rng(80);
                let (e, c) = (off_zero(&shape, &mut r), off_zero(&shape, &mut r));
                check_inputs(&[e, c], STEP, |g, v| feature_loss(g, v[0], v[1]))
            }),
        ),
        (
            "deep feature loss",
            Box::new(move || {
                let aux = tiny_aux(81)?;
                let mut r = rng(82);
                let (e, c) = (off_zero(&shape, &mut r), off_zero(&shape, &mut r));
                // The clean side is a detached target; only the enhanced input carries gradient.
                check_inputs(&[e], STEP, |g, v| {
                    let c = g.constant(c.clone());
                    deep_feature_loss(g, &aux, v[0], c)
                })
            }),
        ),
        (
            "deep feature loss + feature loss",
            Box::new(move || {
                let aux = tiny_aux(83)?;
                let mut r = rng(84);
                let (e, c) = (off_zero(&shape, &mut r), off_zero(&shape, &mut r));
                check_inputs(&[e], STEP, |g, v| {
                    let c = g.constant(c.clone());
                    combined_loss(g, &aux, v[0], c)
                })
            }),
        ),
    ]
}

/// Run every case; each entry is `(name, report)`.
pub fn run_all() -> Vec<(&'static str, Result<GradCheckReport>)> {
    primitive_cases()
        .into_iter()
        .chain(composite_cases())
        .chain(loss_cases())
        .map(|(name, case)| (name, case()))
        .collect()
}
