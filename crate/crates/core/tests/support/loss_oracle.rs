// Loop-based reference values for the three enhancement losses on random
// toy tap networks.

use dfl_core::autodiff::{Conv2dSpec, Graph, Tensor, Var};
use dfl_core::loss::{combined_loss, deep_feature_loss, feature_loss, TapNetwork};
use dfl_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SLOPE: f64 = 0.1;

/// Chain of same-padded 3x3 convolutions with leaky ReLU; every layer's
/// output is a tap.
pub struct ToyNet {
    /// `[out, in, 3, 3]` weights per layer.
    pub layers: Vec<Tensor<f64>>,
}

impl ToyNet {
    pub fn random(r: &mut ChaCha8Rng) -> Self {
        let depth = r.random_range(1..=3);
        let mut c_in = 1;
        let layers = (0..depth)
            .map(|_| {
                let c_out = r.random_range(1..=3);
                let w = Tensor::from_fn(vec![c_out, c_in, 3, 3], |_| r.random_range(-0.8..0.8));
                c_in = c_out;
                w
            })
            .collect();
        ToyNet { layers }
    }
}

impl TapNetwork<f64> for ToyNet {
    fn taps(&self, g: &mut Graph<f64>, x: Var) -> Result<Vec<Var>> {
        let mut h = x;
        let mut out = Vec::new();
        for w in &self.layers {
            let wv = g.constant(w.clone());
            let y = g.conv2d(h, wv, Conv2dSpec::same((3, 3), (1, 1)))?;
            h = g.leaky_relu(y, SLOPE);
            out.push(h);
        }
        Ok(out)
    }

    fn is_frozen(&self) -> bool {
        true
    }
}

/// `[c][f][t]` nested vectors for one item.
type Planes = Vec<Vec<Vec<f64>>>;

fn oracle_conv(x: &Planes, w: &Tensor<f64>) -> Planes {
    let (co, ci) = (w.shape()[0], w.shape()[1]);
    let (f, t) = (x[0].len(), x[0][0].len());
    let wd = w.data();
    let mut y = vec![vec![vec![0.0; t]; f]; co];
    for o in 0..co {
        for i in 0..f {
            for j in 0..t {
                let mut acc = 0.0;
                for c in 0..ci {
                    for di in 0..3 {
                        for dj in 0..3 {
                            let (ii, jj) = (i as isize + di as isize - 1, j as isize + dj as isize - 1);
                            if ii >= 0 && jj >= 0 && (ii as usize) < f && (jj as usize) < t {
                                acc += wd[((o * ci + c) * 3 + di) * 3 + dj] * x[c][ii as usize][jj as usize];
                            }
                        }
                    }
                }
                y[o][i][j] = if acc > 0.0 { acc } else { SLOPE * acc };
            }
        }
    }
    y
}

fn oracle_normalize(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            let m = row.iter().sum::<f64>() / row.len() as f64;
            row.iter().map(|v| v - m).collect()
        })
        .collect()
}

fn l1(a: &Planes, b: &Planes) -> f64 {
    let mut s = 0.0;
    for (pa, pb) in a.iter().zip(b) {
        for (ra, rb) in pa.iter().zip(pb) {
            for (x, y) in ra.iter().zip(rb) {
                s += (x - y).abs();
            }
        }
    }
    s
}

/// Reference `(fl, dfl)` for batches `[n][f][t]`.
pub fn oracle(net: &ToyNet, enhanced: &[Vec<Vec<f64>>], clean: &[Vec<Vec<f64>>]) -> (f64, f64) {
    let n = enhanced.len() as f64;
    let mut fl = 0.0;
    let mut dfl = 0.0;
    for (e, c) in enhanced.iter().zip(clean) {
        fl += l1(&vec![e.clone()], &vec![c.clone()]);
        let (mut he, mut hc) = (vec![oracle_normalize(e)], vec![oracle_normalize(c)]);
        for w in &net.layers {
            he = oracle_conv(&he, w);
            hc = oracle_conv(&hc, w);
            dfl += l1(&he, &hc);
        }
    }
    (fl / n, dfl / n)
}

pub struct OracleCase {
    pub fl: (f64, f64),
    pub dfl: (f64, f64),
    pub combined: (f64, f64),
    /// `combined - (dfl + fl)` as computed by the graph.
    pub sum_gap: f64,
}

impl OracleCase {
    pub fn max_error(&self) -> f64 {
        [self.fl, self.dfl, self.combined].iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// One random network and batch; graph values against the loop oracle.
pub fn case(seed: u64) -> Result<OracleCase> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let net = ToyNet::random(&mut r);
    let (n, f, t) = (r.random_range(1..=3), r.random_range(2..=6), r.random_range(3..=9));
    let mut batch = || -> Vec<Vec<Vec<f64>>> {
        (0..n).map(|_| (0..f).map(|_| (0..t).map(|_| r.random_range(-3.0..3.0)).collect()).collect()).collect()
    };
    let (e, c) = (batch(), batch());
    let flat = |b: &[Vec<Vec<f64>>]| -> Tensor<f64> {
        Tensor::new(vec![n, 1, f, t], b.iter().flatten().flatten().copied().collect()).unwrap()
    };
    let (ref_fl, ref_dfl) = oracle(&net, &e, &c);
    let mut g = Graph::new();
    let ev = g.constant(flat(&e));
    let cv = g.constant(flat(&c));
    let fl = feature_loss(&mut g, ev, cv)?;
    let dfl = deep_feature_loss(&mut g, &net, ev, cv)?;
    let comb = combined_loss(&mut g, &net, ev, cv)?;
    let (fl, dfl, comb) = (g.value(fl).item(), g.value(dfl).item(), g.value(comb).item());
    Ok(OracleCase {
        fl: (fl, ref_fl),
        dfl: (dfl, ref_dfl),
        combined: (comb, ref_fl + ref_dfl),
        sum_gap: comb - (dfl + fl),
    })
}
