//! Temporal receptive field by gradient probing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Enhancer, ForwardOpts};
use crate::autodiff::{Graph, Mode, Tensor, Var};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Width of the span of input frames with nonzero influence on the centre
/// output frame of `f`, probed on a random `[1, 1, bands, frames]` input.
pub fn probe_frames<S: Scalar>(
    bands: usize,
    frames: usize,
    f: impl FnOnce(&mut Graph<S>, Var) -> Result<Var>,
) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e3779b9);
    let mut g = Graph::new();
    let x = g.input(Tensor::from_fn(vec![1, 1, bands, frames], |_| S::lit(rng.random_range(-1.0..1.0))));
    let y = f(&mut g, x)?;
    let s = g.shape(y).to_vec();
    if s.len() != 4 || s[3] != frames {
        return Err(shape_err!("probe needs a time-preserving map, got {:?}", s));
    }
    let centre = frames / 2;
    let selector = Tensor::from_fn(s.clone(), |i| if i % frames == centre { S::one() } else { S::zero() });
    let sel = g.constant(selector);
    let picked = g.mul(y, sel)?;
    let root = g.sum(picked);
    g.backward(root)?;
    let grad = g.grad(x).unwrap_or(&[]);
    let touched: Vec<usize> = (0..frames)
        .filter(|&t| (0..bands).any(|b| grad.get(b * frames + t).is_some_and(|v| *v != S::zero())))
        .collect();
    Ok(match (touched.first(), touched.last()) {
        (Some(a), Some(b)) => b - a + 1,
        _ => 0,
    })
}

/// Receptive field of an enhancer's mask logits, in frames.
///
/// Runs in eval mode with time-pooled TSE descriptors held fixed, so the
/// result reflects the convolutional context. Zero-initialized tensors are
/// replaced with random values first so that every path carries signal.
pub fn receptive_field<S: Scalar>(enhancer: &Enhancer<S>) -> Result<usize> {
    let mut store = enhancer.store.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let ids: Vec<_> = store
        .iter()
        .filter(|(_, p)| p.trainable && p.value.data().iter().all(|&v| v == S::zero()))
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        let p = store.entry_mut(id);
        let shape = p.value.shape().to_vec();
        p.value = Tensor::from_fn(shape, |_| S::lit(rng.random_range(-0.5..0.5)));
    }
    let frames = 2 * enhancer.config().context_frames() + 41;
    let opts = ForwardOpts {
        mode: Mode::Eval,
        hold_context: true,
    };
    probe_frames(enhancer.config().n_bands(), frames, |g, x| enhancer.logits_with(g, &store, x, opts))
}
