//! Instance normalization with learned affine parameters.

use super::graph::{Graph, Var};
use super::tensor::Tensor;

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

impl Graph {
    /// Per-(sample, channel) standardization over the spatial axes followed by
    /// a learned scale and shift: `gamma * (x - mean) / sqrt(var + eps) + beta`.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let vx = self.value(x);
        let (n, c, h, w) = vx.dims4();
        let m = h * w;
        assert!(m >= 1, "instance_norm needs at least one spatial element");
        let (vg, vb) = (self.value(gamma), self.value(beta));
        assert_eq!(vg.shape(), &[c], "gamma must have one entry per channel");
        assert_eq!(vb.shape(), &[c], "beta must have one entry per channel");

        let mut stats = Vec::with_capacity(n * c);
        let mut out = Tensor::zeros(&[n, c, h, w]);
        for nc in 0..n * c {
            let plane = &vx.data()[nc * m..(nc + 1) * m];
            let mean = plane.iter().sum::<f64>() / m as f64;
            let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            stats.push((mean, inv_std));
            let (scale, shift) = (vg.data()[nc % c], vb.data()[nc % c]);
            for (o, &v) in out.data_mut()[nc * m..(nc + 1) * m].iter_mut().zip(plane) {
                *o = scale * (v - mean) * inv_std + shift;
            }
        }

        self.custom(
            out,
            &[x, gamma, beta],
            Box::new(move |g, grad, sink| {
                let vx = g.value(x);
                let vg = g.value(gamma);
                let need_x = g.needs_grad(x);
                let need_gamma = g.needs_grad(gamma);
                let need_beta = g.needs_grad(beta);
                let mut gx = if need_x { Some(Tensor::zeros(vx.shape())) } else { None };
                let mut ggamma = Tensor::zeros(&[c]);
                let mut gbeta = Tensor::zeros(&[c]);
                for nc in 0..n * c {
                    let (mean, inv_std) = stats[nc];
                    let plane = &vx.data()[nc * m..(nc + 1) * m];
                    let gplane = &grad.data()[nc * m..(nc + 1) * m];
                    let mut sum_dy = 0.0;
                    let mut sum_dy_xhat = 0.0;
                    for (&dy, &v) in gplane.iter().zip(plane) {
                        sum_dy += dy;
                        sum_dy_xhat += dy * (v - mean) * inv_std;
                    }
                    ggamma.data_mut()[nc % c] += sum_dy_xhat;
                    gbeta.data_mut()[nc % c] += sum_dy;
                    if let Some(gx) = gx.as_mut() {
                        let scale = vg.data()[nc % c] * inv_std;
                        let mean_dy = sum_dy / m as f64;
                        let mean_dy_xhat = sum_dy_xhat / m as f64;
                        for ((o, &dy), &v) in gx.data_mut()[nc * m..(nc + 1) * m]
                            .iter_mut()
                            .zip(gplane)
                            .zip(plane)
                        {
                            let xhat = (v - mean) * inv_std;
                            *o = scale * (dy - mean_dy - xhat * mean_dy_xhat);
                        }
                    }
                }
                if let Some(gx) = gx {
                    sink.add(x, gx);
                }
                if need_gamma {
                    sink.add(gamma, ggamma);
                }
                if need_beta {
                    sink.add(beta, gbeta);
                }
            }),
        )
    }
}
