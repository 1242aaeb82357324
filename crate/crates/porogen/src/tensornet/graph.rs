//! Reverse-mode differentiation tape.
//!
//! A [`Graph`] records every operation as a node holding the forward value and
//! a backward closure. [`Graph::backward`] walks the tape in reverse from a
//! scalar loss and accumulates gradients for every node that needs them.
//! Gradients are accumulated in tape order, so results are bit-deterministic
//! for a given sequence of operations.

use super::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type BackwardFn = Box<dyn Fn(&Graph, &Tensor, &mut GradSink)>;

pub(crate) struct Node {
    value: Tensor,
    needs_grad: bool,
    backward: Option<BackwardFn>,
}

/// Collects gradient contributions during the backward pass.
pub struct GradSink {
    grads: Vec<Option<Tensor>>,
}

impl GradSink {
    /// Adds `grad` into the accumulator of `target`.
    pub fn add(&mut self, target: Var, grad: Tensor) {
        match &mut self.grads[target.0] {
            Some(acc) => acc.add_in_place(&grad),
            slot @ None => *slot = Some(grad),
        }
    }
}

/// Gradients of a scalar loss with respect to tape nodes.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads[var.0].take()
    }

    /// Gradient for `var`, or zeros of the given shape when the loss does not
    /// depend on it.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        match self.grads[var.0] {
            Some(ref t) => t.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf the loss is never differentiated against (constants, data).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, false, None)
    }

    /// Leaf with gradient tracking (network parameters, or any tensor under a
    /// gradient check).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, None)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn needs_grad(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, backward: Option<BackwardFn>) -> Var {
        self.nodes.push(Node { value, needs_grad, backward });
        Var(self.nodes.len() - 1)
    }

    /// Registers an operation node. `parents` determines gradient tracking;
    /// `backward` receives the output gradient and pushes contributions for
    /// any parent it differentiates.
    pub fn custom(&mut self, value: Tensor, parents: &[Var], backward: BackwardFn) -> Var {
        let needs = parents.iter().any(|&p| self.nodes[p.0].needs_grad);
        self.push(value, needs, if needs { Some(backward) } else { None })
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.nodes[loss.0].value.numel(), 1, "backward requires a scalar loss");
        let mut sink = GradSink { grads: (0..self.nodes.len()).map(|_| None).collect() };
        sink.grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(backward) = node.backward.as_ref() else { continue };
            let Some(grad) = sink.grads[idx].take() else { continue };
            backward(self, &grad, &mut sink);
            sink.grads[idx] = Some(grad);
        }
        Gradients { grads: sink.grads }
    }

    // ----- elementwise arithmetic -------------------------------------------------

    fn binary_same_shape(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        backward: BackwardFn,
    ) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(
            va.same_shape(vb),
            "shape mismatch {:?} vs {:?}",
            va.shape(),
            vb.shape()
        );
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape(), data);
        self.custom(value, &[a, b], backward)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, |x, y| x + y, Box::new(move |g, grad, sink| {
            if g.needs_grad(a) {
                sink.add(a, grad.clone());
            }
            if g.needs_grad(b) {
                sink.add(b, grad.clone());
            }
        }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, |x, y| x - y, Box::new(move |g, grad, sink| {
            if g.needs_grad(a) {
                sink.add(a, grad.clone());
            }
            if g.needs_grad(b) {
                let mut neg = grad.clone();
                neg.scale_in_place(-1.0);
                sink.add(b, neg);
            }
        }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, |x, y| x * y, Box::new(move |g, grad, sink| {
            if g.needs_grad(a) {
                let vb = g.value(b);
                let data = grad.data().iter().zip(vb.data()).map(|(&gv, &y)| gv * y).collect();
                sink.add(a, Tensor::new(grad.shape(), data));
            }
            if g.needs_grad(b) {
                let va = g.value(a);
                let data = grad.data().iter().zip(va.data()).map(|(&gv, &x)| gv * x).collect();
                sink.add(b, Tensor::new(grad.shape(), data));
            }
        }))
    }

    fn unary(
        &mut self,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64 + 'static,
    ) -> Var {
        let vx = &self.nodes[x.0].value;
        let data: Vec<f64> = vx.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(vx.shape(), data);
        self.custom(
            value,
            &[x],
            Box::new(move |g, grad, sink| {
                let vin = g.value(x);
                let data = grad
                    .data()
                    .iter()
                    .zip(vin.data())
                    .map(|(&gv, &v)| gv * df(v))
                    .collect();
                sink.add(x, Tensor::new(grad.shape(), data));
            }),
        )
    }

    /// `mul_factor * x + add_term`, elementwise.
    pub fn affine(&mut self, x: Var, mul_factor: f64, add_term: f64) -> Var {
        self.unary(x, move |v| mul_factor * v + add_term, move |_| mul_factor)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        // subgradient 0 at the tie v == 0
        self.unary(
            x,
            |v| v.abs(),
            |v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            },
        )
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), |v| 1.0 / v)
    }

    /// Clamp with zero gradient outside the open interval `(lo, hi)`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(
            x,
            move |v| v.clamp(lo, hi),
            move |v| if v > lo && v < hi { 1.0 } else { 0.0 },
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), |v| if v > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(
            x,
            move |v| if v >= 0.0 { v } else { slope * v },
            move |v| if v > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let vx = &self.nodes[x.0].value;
        let data: Vec<f64> = vx.data().iter().map(|&v| stable_sigmoid(v)).collect();
        let value = Tensor::new(vx.shape(), data);
        self.custom(
            value,
            &[x],
            Box::new(move |g, grad, sink| {
                let vin = g.value(x);
                let data = grad
                    .data()
                    .iter()
                    .zip(vin.data())
                    .map(|(&gv, &v)| {
                        let s = stable_sigmoid(v);
                        gv * s * (1.0 - s)
                    })
                    .collect();
                sink.add(x, Tensor::new(grad.shape(), data));
            }),
        )
    }

    // ----- reductions -------------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let vx = &self.nodes[x.0].value;
        let value = Tensor::scalar(vx.data().iter().sum());
        self.custom(
            value,
            &[x],
            Box::new(move |g, grad, sink| {
                let shape = g.value(x).shape().to_vec();
                sink.add(x, Tensor::filled(&shape, grad.item()));
            }),
        )
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let vx = &self.nodes[x.0].value;
        let n = vx.numel() as f64;
        let value = Tensor::scalar(vx.data().iter().sum::<f64>() / n);
        self.custom(
            value,
            &[x],
            Box::new(move |g, grad, sink| {
                let shape = g.value(x).shape().to_vec();
                sink.add(x, Tensor::filled(&shape, grad.item() / n));
            }),
        )
    }

    // ----- structural ops ---------------------------------------------------------

    /// Concatenates `(n, c1, h, w)` and `(n, c2, h, w)` along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (n, c1, h, w) = va.dims4();
        let (nb, c2, hb, wb) = vb.dims4();
        assert!(
            n == nb && h == hb && w == wb,
            "concat_channels: incompatible shapes {:?} vs {:?}",
            va.shape(),
            vb.shape()
        );
        let plane = h * w;
        let mut data = Vec::with_capacity(n * (c1 + c2) * plane);
        for i in 0..n {
            data.extend_from_slice(&va.data()[i * c1 * plane..(i + 1) * c1 * plane]);
            data.extend_from_slice(&vb.data()[i * c2 * plane..(i + 1) * c2 * plane]);
        }
        let value = Tensor::new(&[n, c1 + c2, h, w], data);
        self.custom(
            value,
            &[a, b],
            Box::new(move |g, grad, sink| {
                let chunk = (c1 + c2) * plane;
                if g.needs_grad(a) {
                    let mut ga = Tensor::zeros(&[n, c1, h, w]);
                    for i in 0..n {
                        ga.data_mut()[i * c1 * plane..(i + 1) * c1 * plane]
                            .copy_from_slice(&grad.data()[i * chunk..i * chunk + c1 * plane]);
                    }
                    sink.add(a, ga);
                }
                if g.needs_grad(b) {
                    let mut gb = Tensor::zeros(&[n, c2, h, w]);
                    for i in 0..n {
                        gb.data_mut()[i * c2 * plane..(i + 1) * c2 * plane].copy_from_slice(
                            &grad.data()[i * chunk + c1 * plane..(i + 1) * chunk],
                        );
                    }
                    sink.add(b, gb);
                }
            }),
        )
    }

    /// Spatially replicates a noise vector `(k,)` to `(n, k, h, w)` and
    /// concatenates it behind the feature channels of `(n, c, h, w)`.
    pub fn replicate_and_concat(&mut self, features: Var, noise: Var) -> Var {
        let vf = &self.nodes[features.0].value;
        let (n, c, h, w) = vf.dims4();
        let vz = &self.nodes[noise.0].value;
        assert_eq!(vz.shape().len(), 1, "noise must be a vector");
        let k = vz.numel();
        let plane = h * w;
        let mut data = Vec::with_capacity(n * (c + k) * plane);
        for i in 0..n {
            data.extend_from_slice(&vf.data()[i * c * plane..(i + 1) * c * plane]);
            for &z in vz.data() {
                data.extend(std::iter::repeat_n(z, plane));
            }
        }
        let value = Tensor::new(&[n, c + k, h, w], data);
        self.custom(
            value,
            &[features, noise],
            Box::new(move |g, grad, sink| {
                let chunk = (c + k) * plane;
                if g.needs_grad(features) {
                    let mut gf = Tensor::zeros(&[n, c, h, w]);
                    for i in 0..n {
                        gf.data_mut()[i * c * plane..(i + 1) * c * plane]
                            .copy_from_slice(&grad.data()[i * chunk..i * chunk + c * plane]);
                    }
                    sink.add(features, gf);
                }
                if g.needs_grad(noise) {
                    let mut gz = Tensor::zeros(&[k]);
                    for i in 0..n {
                        for (j, slot) in gz.data_mut().iter_mut().enumerate() {
                            let base = i * chunk + (c + j) * plane;
                            *slot += grad.data()[base..base + plane].iter().sum::<f64>();
                        }
                    }
                    sink.add(noise, gz);
                }
            }),
        )
    }
}

#[inline]
pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
