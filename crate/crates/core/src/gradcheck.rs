//! Finite-difference verification of the hand-written backward passes.

use crate::error::{Error, Result, Shape};
use crate::rng::Stream;
use crate::tensor::{
    conv2d, conv2d_backward_input, global_avg_pool, global_avg_pool_backward, pointwise,
    sigmoid_map, ConvSpec, PointwiseKind, Tensor,
};

/// A tensor-to-tensor map with an analytic vector-Jacobian product.
pub trait Differentiable {
    fn forward(&self, x: &Tensor) -> Result<Tensor>;

    /// Gradient with respect to `x` of `<grad_out, forward(x)>`.
    fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor>;
}

pub struct Conv2dOp(pub ConvSpec);

impl Differentiable for Conv2dOp {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.0)
    }

    fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        conv2d_backward_input(x.shape(), &self.0, grad_out)
    }
}

/// `x (+|*) other` with `other` held fixed.
pub struct PointwiseOp {
    pub other: Tensor,
    pub kind: PointwiseKind,
}

impl Differentiable for PointwiseOp {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        pointwise(x, &self.other, self.kind)
    }

    fn backward(&self, _x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        match self.kind {
            PointwiseKind::Add => Ok(grad_out.clone()),
            PointwiseKind::Mul => pointwise(grad_out, &self.other, PointwiseKind::Mul),
        }
    }
}

pub struct SigmoidOp;

impl Differentiable for SigmoidOp {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(sigmoid_map(x))
    }

    fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let s = sigmoid_map(x);
        let ds = s.map(|v| v * (1.0 - v));
        pointwise(grad_out, &ds, PointwiseKind::Mul)
    }
}

pub struct GlobalAvgPoolOp;

impl Differentiable for GlobalAvgPoolOp {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        global_avg_pool(x)
    }

    fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        global_avg_pool_backward(x.shape(), grad_out)
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Input coordinates probed; every coordinate when the input is smaller.
    pub max_samples: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            max_samples: 256,
            seed: 0x9e37_79b9,
        }
    }
}

/// Largest relative disagreement between the analytic gradient and a
/// central finite difference of the scalar probe `<r, op(x)>`, with `r`
/// a seeded random cotangent.
pub fn grad_check(op: &dyn Differentiable, x: &Tensor, eps: f64) -> Result<f64> {
    grad_check_with(op, x, eps, &GradCheckConfig::default())
}

pub fn grad_check_with(
    op: &dyn Differentiable,
    x: &Tensor,
    eps: f64,
    cfg: &GradCheckConfig,
) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid("grad_check", format!("eps must be positive, got {eps}")));
    }
    let y = op.forward(x)?;
    let mut rng = Stream::new(cfg.seed);
    let probe = Tensor::from_parts(
        y.shape(),
        (0..y.len()).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
    );
    let analytic = op.backward(x, &probe)?;
    if analytic.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            op: "grad_check",
            left: x.shape(),
            right: analytic.shape(),
        });
    }
    analytic.ensure_finite("grad_check backward")?;

    let coords: Vec<usize> = if x.len() <= cfg.max_samples {
        (0..x.len()).collect()
    } else {
        (0..cfg.max_samples)
            .map(|_| (rng.next_u64() % x.len() as u64) as usize)
            .collect()
    };

    let loss = |t: &Tensor| -> Result<f64> {
        let out = op.forward(t)?;
        Ok(out.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum())
    };

    let mut worst: f64 = 0.0;
    let mut shifted = x.clone();
    for &i in &coords {
        let orig = x.data()[i];
        shifted.data_mut()[i] = orig + eps;
        let plus = loss(&shifted)?;
        shifted.data_mut()[i] = orig - eps;
        let minus = loss(&shifted)?;
        shifted.data_mut()[i] = orig;
        let fd = (plus - minus) / (2.0 * eps);
        if !fd.is_finite() {
            return Err(Error::NonFinite {
                op: "grad_check",
                coord: coord_string(x.shape(), i),
            });
        }
        let err = (analytic.data()[i] - fd).abs() / (fd.abs() + 1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

fn coord_string(shape: Shape, i: usize) -> String {
    let plane = shape.height * shape.width;
    format!("({}, {}, {})", i / plane, (i % plane) / shape.width, i % shape.width)
}
