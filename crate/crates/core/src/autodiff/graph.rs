//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s in execution
//! order. [`Graph::backward`] walks the tape in reverse and propagates
//! adjoints; gradients of leaves bound to a [`ParamStore`] are then pulled
//! into the store with [`ParamStore::accumulate_grads`].

use crate::autodiff::params::{ParamId, ParamStore, StoreId};
use crate::autodiff::tensor::Tensor;
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) struct Ctx<'a, S> {
    pub inputs: Vec<&'a Tensor<S>>,
    pub output: &'a Tensor<S>,
    pub grad: &'a [S],
    pub needs: Vec<bool>,
}

pub(crate) type BackwardFn<S> = Box<dyn Fn(&Ctx<'_, S>) -> Vec<Option<Vec<S>>>>;

struct Node<S> {
    value: Tensor<S>,
    inputs: Vec<Var>,
    backward: Option<BackwardFn<S>>,
    requires_grad: bool,
    binding: Option<(StoreId, ParamId)>,
}

/// Running-statistic update produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct StatUpdate<S> {
    pub store: StoreId,
    pub mean: ParamId,
    pub var: ParamId,
    pub batch_mean: Vec<S>,
    pub batch_var: Vec<S>,
}

pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
    pub(crate) stat_updates: Vec<StatUpdate<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            stat_updates: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false, None)
    }

    /// Leaf whose gradient is retained after [`Graph::backward`].
    pub fn input(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, true, None)
    }

    /// Leaf holding a copy of a stored parameter. Trainable entries of an
    /// unfrozen store participate in differentiation.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        let entry = store.entry(id);
        let trainable = entry.trainable && !store.is_frozen();
        self.leaf(
            entry.value.clone(),
            trainable,
            trainable.then_some((store.id(), id)),
        )
    }

    fn leaf(&mut self, value: Tensor<S>, requires_grad: bool, binding: Option<(StoreId, ParamId)>) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            backward: None,
            requires_grad,
            binding,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor<S>, inputs: Vec<Var>, backward: BackwardFn<S>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            inputs,
            backward: requires_grad.then_some(backward),
            requires_grad,
            binding: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward root with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub(crate) fn bound_grads(&self, store: StoreId) -> impl Iterator<Item = (ParamId, &[S])> {
        self.nodes.iter().enumerate().filter_map(move |(i, n)| match n.binding {
            Some((s, id)) if s == store => self.grads[i].as_deref().map(|g| (id, g)),
            _ => None,
        })
    }

    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate<S>> {
        std::mem::take(&mut self.stat_updates)
    }

    /// Propagate adjoints from a scalar root. Interior adjoints are released
    /// as soon as they have been consumed; leaf adjoints are kept.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_node = &self.nodes[root.0];
        if root_node.value.len() != 1 {
            return Err(Error::Invalid(format!(
                "backward root must be scalar, got shape {:?}",
                root_node.value.shape()
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !root_node.requires_grad {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![S::one()]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = self.grads[i].take() else {
                continue;
            };
            let ctx = Ctx {
                inputs: node.inputs.iter().map(|v| &self.nodes[v.0].value).collect(),
                output: &node.value,
                grad: &grad,
                needs: node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect(),
            };
            let input_grads = backward(&ctx);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            let inputs = node.inputs.clone();
            for (v, g) in inputs.into_iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut self.grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err!("{op}: {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, f: impl Fn(S) -> S, df: impl Fn(S, S) -> S + 'static) -> Var {
        let value = self.value(x).map(f);
        self.push(
            value,
            vec![x],
            Box::new(move |c| {
                let g = c
                    .inputs[0]
                    .data()
                    .iter()
                    .zip(c.output.data())
                    .zip(c.grad)
                    .map(|((&x, &y), &g)| g * df(x, y))
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(
            value,
            vec![a, b],
            Box::new(|c| {
                vec![
                    c.needs[0].then(|| c.grad.to_vec()),
                    c.needs[1].then(|| c.grad.to_vec()),
                ]
            }),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x - y);
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(
            value,
            vec![a, b],
            Box::new(|c| {
                vec![
                    c.needs[0].then(|| c.grad.to_vec()),
                    c.needs[1].then(|| c.grad.iter().map(|&g| -g).collect()),
                ]
            }),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(
            value,
            vec![a, b],
            Box::new(|c| {
                vec![
                    c.needs[0].then(|| zip_map(c.grad, c.inputs[1].data(), |g, y| g * y)),
                    c.needs[1].then(|| zip_map(c.grad, c.inputs[0].data(), |g, x| g * x)),
                ]
            }),
        ))
    }

    pub fn mul_scalar(&mut self, x: Var, k: S) -> Var {
        self.unary(x, |v| v * k, move |_, _| k)
    }

    pub fn add_scalar(&mut self, x: Var, k: S) -> Var {
        self.unary(x, |v| v + k, |_, _| S::one())
    }

    /// Multiply every element of `x` by the single value held in `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(shape_err!("scale_by: scale must have one element, got {:?}", self.shape(s)));
        }
        let k = self.value(s).item();
        let value = self.value(x).map(|v| v * k);
        Ok(self.push(
            value,
            vec![x, s],
            Box::new(|c| {
                let k = c.inputs[1].item();
                vec![
                    c.needs[0].then(|| c.grad.iter().map(|&g| g * k).collect()),
                    c.needs[1].then(|| {
                        vec![c.grad.iter().zip(c.inputs[0].data()).map(|(&g, &x)| g * x).sum()]
                    }),
                ]
            }),
        ))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: S) -> Var {
        self.unary(
            x,
            move |v| if v > S::zero() { v } else { v * slope },
            move |v, _| if v > S::zero() { S::one() } else { slope },
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| v.max(S::zero()),
            |v, _| if v > S::zero() { S::one() } else { S::zero() },
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, |_, y| y * (S::one() - y))
    }

    pub fn swish(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| v * sigmoid(v),
            |v, _| {
                let s = sigmoid(v);
                s * (S::one() + v * (S::one() - s))
            },
        )
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), |_, y| y)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), |v, _| v.recip())
    }

    /// Absolute value with subgradient 0 at 0.
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| v.abs(),
            |v, _| {
                if v > S::zero() {
                    S::one()
                } else if v < S::zero() {
                    -S::one()
                } else {
                    S::zero()
                }
            },
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).sum();
        let n = self.value(x).len();
        self.push(
            Tensor::scalar(total),
            vec![x],
            Box::new(move |c| vec![Some(vec![c.grad[0]; n])]),
        )
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.sum(x);
        self.mul_scalar(s, S::one() / S::lit(n as f64))
    }

    /// Entrywise L1 distance `sum |a - b|`.
    pub fn l1_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let d = self.abs(d);
        Ok(self.sum(d))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, vec![x], Box::new(|c| vec![Some(c.grad.to_vec())])))
    }

    /// Copy of `x` that blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.constant(value)
    }

    /// Mean over the last axis, keeping it with length 1.
    pub fn mean_last(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let t = *shape.last().expect("mean_last on scalar");
        let inv = S::one() / S::lit(t as f64);
        let data: Vec<S> = self
            .value(x)
            .data()
            .chunks(t)
            .map(|row| row.iter().copied().sum::<S>() * inv)
            .collect();
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = 1;
        let value = Tensor::new(out_shape, data).expect("mean_last shape");
        self.push(
            value,
            vec![x],
            Box::new(move |c| {
                let g = c.grad.iter().flat_map(|&g| std::iter::repeat_n(g * inv, t)).collect();
                vec![Some(g)]
            }),
        )
    }

    fn check_last_broadcast(&self, x: Var, m: Var, op: &str) -> Result<usize> {
        let xs = self.shape(x);
        let ms = self.shape(m);
        let ok = xs.len() == ms.len()
            && !xs.is_empty()
            && xs[..xs.len() - 1] == ms[..ms.len() - 1]
            && ms[ms.len() - 1] == 1;
        if !ok {
            return Err(shape_err!("{op}: cannot broadcast {:?} over {:?}", ms, xs));
        }
        Ok(xs[xs.len() - 1])
    }

    /// `x - m` where `m` has length 1 along the last axis.
    pub fn sub_last(&mut self, x: Var, m: Var) -> Result<Var> {
        let t = self.check_last_broadcast(x, m, "sub_last")?;
        let mv = self.value(m).data();
        let data: Vec<S> = self
            .value(x)
            .data()
            .chunks(t)
            .zip(mv)
            .flat_map(|(row, &mu)| row.iter().map(move |&v| v - mu))
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(
            value,
            vec![x, m],
            Box::new(move |c| {
                vec![
                    c.needs[0].then(|| c.grad.to_vec()),
                    c.needs[1].then(|| c.grad.chunks(t).map(|r| -r.iter().copied().sum::<S>()).collect()),
                ]
            }),
        ))
    }

    /// `x * g` where `g` has length 1 along the last axis.
    pub fn mul_last(&mut self, x: Var, gate: Var) -> Result<Var> {
        let t = self.check_last_broadcast(x, gate, "mul_last")?;
        let gv = self.value(gate).data();
        let data: Vec<S> = self
            .value(x)
            .data()
            .chunks(t)
            .zip(gv)
            .flat_map(|(row, &k)| row.iter().map(move |&v| v * k))
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(
            value,
            vec![x, gate],
            Box::new(move |c| {
                let xg = c.inputs[0].data();
                let gg = c.inputs[1].data();
                vec![
                    c.needs[0].then(|| {
                        c.grad
                            .chunks(t)
                            .zip(gg)
                            .flat_map(|(r, &k)| r.iter().map(move |&g| g * k))
                            .collect()
                    }),
                    c.needs[1].then(|| {
                        c.grad
                            .chunks(t)
                            .zip(xg.chunks(t))
                            .map(|(r, xr)| r.iter().zip(xr).map(|(&g, &x)| g * x).sum())
                            .collect()
                    }),
                ]
            }),
        ))
    }
}

#[inline]
pub(crate) fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

#[inline]
pub(crate) fn zip_map<S: Copy>(a: &[S], b: &[S], f: impl Fn(S, S) -> S) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}
