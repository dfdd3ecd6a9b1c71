//! Feature loss, deep feature loss and their sum.
//!
//! Batched inputs are `[N, 1, F, T]`; each loss is the per-pair entrywise
//! L1 sum averaged over the `N` pairs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::speaker::AuxModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "fl")]
    Fl,
    #[serde(rename = "dfl")]
    Dfl,
    #[serde(rename = "dfl+fl")]
    DflFl,
}

impl LossKind {
    pub fn needs_aux(self) -> bool {
        !matches!(self, LossKind::Fl)
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Fl => "fl",
            LossKind::Dfl => "dfl",
            LossKind::DflFl => "dfl+fl",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fl" => Ok(LossKind::Fl),
            "dfl" => Ok(LossKind::Dfl),
            "dfl+fl" => Ok(LossKind::DflFl),
            other => Err(Error::Config(format!("unknown loss {other:?}; expected fl, dfl or dfl+fl"))),
        }
    }
}

/// A frozen network whose hidden activations define the deep feature loss.
pub trait TapNetwork<S: Scalar> {
    /// Activations for mean-normalized features `x: [N, 1, F, T]`.
    fn taps(&self, g: &mut Graph<S>, x: Var) -> Result<Vec<Var>>;

    fn is_frozen(&self) -> bool;
}

impl<S: Scalar> TapNetwork<S> for AuxModel<S> {
    fn taps(&self, g: &mut Graph<S>, x: Var) -> Result<Vec<Var>> {
        self.tap_activations(g, x)
    }

    fn is_frozen(&self) -> bool {
        self.store.is_frozen()
    }
}

fn batch_size<S: Scalar>(g: &Graph<S>, a: Var, b: Var) -> Result<usize> {
    if g.shape(a) != g.shape(b) || g.shape(a).is_empty() {
        return Err(shape_err!("loss inputs differ: {:?} vs {:?}", g.shape(a), g.shape(b)));
    }
    Ok(g.shape(a)[0].max(1))
}

fn per_pair<S: Scalar>(g: &mut Graph<S>, total: Var, n: usize) -> Var {
    g.mul_scalar(total, S::one() / S::lit(n as f64))
}

/// `|| clean - enhanced ||_{1,1}`.
pub fn feature_loss<S: Scalar>(g: &mut Graph<S>, enhanced: Var, clean: Var) -> Result<Var> {
    let n = batch_size(g, enhanced, clean)?;
    let total = g.l1_distance(clean, enhanced)?;
    Ok(per_pair(g, total, n))
}

/// Subtract each band's mean over the last (time) axis.
pub fn normalize<S: Scalar>(g: &mut Graph<S>, x: Var) -> Result<Var> {
    let m = g.mean_last(x);
    g.sub_last(x, m)
}

/// `sum_i || a_i(norm(clean)) - a_i(norm(enhanced)) ||_{1,1}`.
pub fn deep_feature_loss<S: Scalar>(
    g: &mut Graph<S>,
    aux: &dyn TapNetwork<S>,
    enhanced: Var,
    clean: Var,
) -> Result<Var> {
    if !aux.is_frozen() {
        return Err(Error::Invalid("deep feature loss needs a frozen auxiliary network".into()));
    }
    let n = batch_size(g, enhanced, clean)?;
    let clean = g.detach(clean);
    let cn = normalize(g, clean)?;
    let en = normalize(g, enhanced)?;
    let ct = aux.taps(g, cn)?;
    let et = aux.taps(g, en)?;
    if ct.is_empty() || ct.len() != et.len() {
        return Err(Error::Invalid("auxiliary network returned no taps".into()));
    }
    let mut total: Option<Var> = None;
    for (c, e) in ct.into_iter().zip(et) {
        let c = g.detach(c);
        let d = g.l1_distance(c, e)?;
        total = Some(match total {
            Some(t) => g.add(t, d)?,
            None => d,
        });
    }
    Ok(per_pair(g, total.expect("non-empty taps"), n))
}

/// `deep_feature_loss + feature_loss`.
pub fn combined_loss<S: Scalar>(g: &mut Graph<S>, aux: &dyn TapNetwork<S>, enhanced: Var, clean: Var) -> Result<Var> {
    let dfl = deep_feature_loss(g, aux, enhanced, clean)?;
    let fl = feature_loss(g, enhanced, clean)?;
    g.add(dfl, fl)
}

/// Loss of the requested kind; `aux` is required unless `kind` is FL.
pub fn enhancement_loss<S: Scalar>(
    g: &mut Graph<S>,
    kind: LossKind,
    aux: Option<&dyn TapNetwork<S>>,
    enhanced: Var,
    clean: Var,
) -> Result<Var> {
    let need = || Error::Config(format!("loss {kind} needs an auxiliary checkpoint"));
    match kind {
        LossKind::Fl => feature_loss(g, enhanced, clean),
        LossKind::Dfl => deep_feature_loss(g, aux.ok_or_else(need)?, enhanced, clean),
        LossKind::DflFl => combined_loss(g, aux.ok_or_else(need)?, enhanced, clean),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    struct Identity;

    impl TapNetwork<f64> for Identity {
        fn taps(&self, _: &mut Graph<f64>, x: Var) -> Result<Vec<Var>> {
            Ok(vec![x])
        }

        fn is_frozen(&self) -> bool {
            true
        }
    }

    fn pair(g: &mut Graph<f64>, a: &[f64], b: &[f64], shape: Vec<usize>) -> (Var, Var) {
        (
            g.input(Tensor::new(shape.clone(), a.to_vec()).unwrap()),
            g.constant(Tensor::new(shape, b.to_vec()).unwrap()),
        )
    }

    #[test]
    fn feature_loss_small_example() {
        let mut g = Graph::new();
        let (e, c) = pair(&mut g, &[1., 1., 3., 3.], &[1., 2., 3., 4.], vec![1, 1, 2, 2]);
        let l = feature_loss(&mut g, e, c).unwrap();
        assert_eq!(g.value(l).item(), 2.0);
        let (e2, _) = pair(&mut g, &[0.; 6], &[0.; 6], vec![1, 1, 2, 3]);
        assert!(feature_loss(&mut g, e2, c).is_err());
    }

    #[test]
    fn identity_tap_reduces_to_normalized_feature_loss() {
        let a: Vec<f64> = (0..12).map(|i| (i * 5 % 7) as f64).collect();
        let b: Vec<f64> = (0..12).map(|i| (i * 3 % 5) as f64 - 1.0).collect();
        let mut g = Graph::new();
        let (e, c) = pair(&mut g, &a, &b, vec![1, 1, 3, 4]);
        let dfl = deep_feature_loss(&mut g, &Identity, e, c).unwrap();
        let en = normalize(&mut g, e).unwrap();
        let cn = normalize(&mut g, c).unwrap();
        let fl = feature_loss(&mut g, en, cn).unwrap();
        assert!((g.value(dfl).item() - g.value(fl).item()).abs() < 1e-12);
    }

    #[test]
    fn losses_vanish_on_identical_inputs_and_sum_exactly() {
        let a: Vec<f64> = (0..24).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..24).map(|i| (i as f64 * 0.7).cos()).collect();
        let mut g = Graph::new();
        let (e, c) = pair(&mut g, &a, &a, vec![2, 1, 3, 4]);
        for kind in [LossKind::Fl, LossKind::Dfl, LossKind::DflFl] {
            let l = enhancement_loss(&mut g, kind, Some(&Identity), e, c).unwrap();
            assert_eq!(g.value(l).item(), 0.0);
        }
        let (e, c) = pair(&mut g, &a, &b, vec![2, 1, 3, 4]);
        let d = deep_feature_loss(&mut g, &Identity, e, c).unwrap();
        let f = feature_loss(&mut g, e, c).unwrap();
        let s = combined_loss(&mut g, &Identity, e, c).unwrap();
        let (d, f, s) = (g.value(d).item(), g.value(f).item(), g.value(s).item());
        assert!((s - (d + f)).abs() < 1e-12);
        assert!(s >= d && s >= f);
    }

    #[test]
    fn loss_kind_parsing_and_aux_requirement() {
        assert_eq!("dfl+fl".parse::<LossKind>().unwrap(), LossKind::DflFl);
        assert!("l2".parse::<LossKind>().is_err());
        let mut g = Graph::<f64>::new();
        let (e, c) = pair(&mut g, &[1.0], &[2.0], vec![1, 1, 1, 1]);
        assert!(enhancement_loss(&mut g, LossKind::Dfl, None, e, c).is_err());
        assert!(enhancement_loss(&mut g, LossKind::Fl, None, e, c).is_ok());
    }
}
