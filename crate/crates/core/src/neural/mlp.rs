//! Fully connected tanh network over a flat parameter vector.
//!
//! Parameter layout is layer-major: for each layer the `out x in` weight
//! matrix in row-major order, followed by its `out` biases. Hidden layers use
//! tanh, the output layer is affine.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CdprError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(CdprError::config("algorithm.hidden", "layer sizes must be at least 1"));
        }
        Ok(Self {
            input_dim,
            hidden,
            output_dim,
            activation: Activation::Tanh,
        })
    }

    /// `(in, out)` for each affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in self.hidden.iter().chain(std::iter::once(&self.output_dim)) {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Scaled-normal initialization: `N(0, 1/fan_in)` weights, zero biases;
    /// the output layer is further multiplied by `output_scale`.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R, output_scale: f64) -> ParamVector {
        let dims = self.layer_dims();
        let mut values = Vec::with_capacity(self.param_count());
        for (k, (fan_in, fan_out)) in dims.iter().enumerate() {
            let mut scale = (1.0 / *fan_in as f64).sqrt();
            if k + 1 == dims.len() {
                scale *= output_scale;
            }
            for _ in 0..fan_in * fan_out {
                let z: f64 = StandardNormal.sample(rng);
                values.push(z * scale);
            }
            values.extend(std::iter::repeat_n(0.0, *fan_out));
        }
        ParamVector(values)
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        let expected = self.param_count();
        if params.len() != expected {
            return Err(CdprError::DimensionMismatch {
                expected,
                found: params.len(),
            });
        }
        Ok(())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim {
            return Err(CdprError::DimensionMismatch {
                expected: self.input_dim,
                found: input.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(n: usize) -> Self {
        ParamVector(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.0.iter_mut().for_each(|x| *x *= alpha);
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One affine layer, unpacked from the flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn unflatten(spec: &MlpSpec, params: &ParamVector) -> Result<Vec<Layer>> {
    spec.check_params(params)?;
    let mut offset = 0;
    Ok(spec
        .layer_dims()
        .into_iter()
        .map(|(inputs, outputs)| {
            let w = &params.0[offset..offset + inputs * outputs];
            offset += inputs * outputs;
            let b = &params.0[offset..offset + outputs];
            offset += outputs;
            Layer {
                inputs,
                outputs,
                weights: w.to_vec(),
                bias: b.to_vec(),
            }
        })
        .collect())
}

pub fn flatten(layers: &[Layer]) -> ParamVector {
    let mut v = Vec::new();
    for l in layers {
        v.extend_from_slice(&l.weights);
        v.extend_from_slice(&l.bias);
    }
    ParamVector(v)
}

/// Layer activations recorded during a forward pass; entry 0 is the input.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache holds at least the input")
    }
}

fn affine(params: &[f64], offset: usize, inputs: usize, outputs: usize, x: &[f64], out: &mut Vec<f64>) {
    let w = &params[offset..offset + inputs * outputs];
    let b = &params[offset + inputs * outputs..offset + inputs * outputs + outputs];
    out.clear();
    out.extend(w.chunks_exact(inputs).zip(b).map(|(row, bias)| dot(row, x) + bias));
}

pub fn forward(spec: &MlpSpec, params: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
    Ok(forward_cached(spec, params, input)?.activations.pop().unwrap())
}

pub fn forward_cached(spec: &MlpSpec, params: &ParamVector, input: &[f64]) -> Result<ForwardCache> {
    spec.check_params(params)?;
    spec.check_input(input)?;
    let dims = spec.layer_dims();
    let mut activations = Vec::with_capacity(dims.len() + 1);
    activations.push(input.to_vec());
    let mut offset = 0;
    for (k, (inputs, outputs)) in dims.iter().enumerate() {
        let mut out = Vec::with_capacity(*outputs);
        affine(
            &params.0,
            offset,
            *inputs,
            *outputs,
            activations.last().unwrap(),
            &mut out,
        );
        if k + 1 < dims.len() {
            out.iter_mut().for_each(|v| *v = v.tanh());
        }
        offset += inputs * outputs + outputs;
        activations.push(out);
    }
    Ok(ForwardCache { activations })
}

/// Reverse pass: accumulates `d(output . output_grad)/d params` into `grad`
/// and optionally writes the gradient with respect to the input.
pub fn backward_cached(
    spec: &MlpSpec,
    params: &ParamVector,
    cache: &ForwardCache,
    output_grad: &[f64],
    grad: &mut [f64],
    input_grad: Option<&mut [f64]>,
) -> Result<()> {
    if output_grad.len() != spec.output_dim {
        return Err(CdprError::DimensionMismatch {
            expected: spec.output_dim,
            found: output_grad.len(),
        });
    }
    if grad.len() != params.len() {
        return Err(CdprError::DimensionMismatch {
            expected: params.len(),
            found: grad.len(),
        });
    }
    let dims = spec.layer_dims();
    let mut offsets = Vec::with_capacity(dims.len());
    let mut acc = 0;
    for (i, o) in &dims {
        offsets.push(acc);
        acc += i * o + o;
    }

    let mut delta = output_grad.to_vec();
    for k in (0..dims.len()).rev() {
        let (inputs, outputs) = dims[k];
        let x = &cache.activations[k];
        let off = offsets[k];
        let (gw, gb) = grad[off..off + inputs * outputs + outputs].split_at_mut(inputs * outputs);
        for (o, d) in delta.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            let row = &mut gw[o * inputs..(o + 1) * inputs];
            for (g, xi) in row.iter_mut().zip(x) {
                *g += d * xi;
            }
            gb[o] += d;
        }
        if k == 0 && input_grad.is_none() {
            break;
        }
        let w = &params.0[off..off + inputs * outputs];
        let mut prev = vec![0.0; inputs];
        for (o, d) in delta.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            for (p, wi) in prev.iter_mut().zip(&w[o * inputs..(o + 1) * inputs]) {
                *p += d * wi;
            }
        }
        if k > 0 {
            // through tanh of the previous layer
            for (p, a) in prev.iter_mut().zip(x) {
                *p *= 1.0 - a * a;
            }
        }
        delta = prev;
    }
    if let Some(ig) = input_grad {
        if ig.len() != spec.input_dim {
            return Err(CdprError::DimensionMismatch {
                expected: spec.input_dim,
                found: ig.len(),
            });
        }
        ig.copy_from_slice(&delta);
    }
    Ok(())
}

/// Gradient of `output . output_grad` with respect to the parameters.
pub fn backward(spec: &MlpSpec, params: &ParamVector, input: &[f64], output_grad: &[f64]) -> Result<ParamVector> {
    let cache = forward_cached(spec, params, input)?;
    let mut grad = vec![0.0; params.len()];
    backward_cached(spec, params, &cache, output_grad, &mut grad, None)?;
    Ok(ParamVector(grad))
}

/// Forward-mode directional derivative of the output along a parameter
/// tangent, using the activations of a cached forward pass.
pub fn jvp_cached(
    spec: &MlpSpec,
    params: &ParamVector,
    cache: &ForwardCache,
    tangent: &ParamVector,
) -> Result<Vec<f64>> {
    spec.check_params(tangent)?;
    let dims = spec.layer_dims();
    let mut dx = vec![0.0; spec.input_dim];
    let mut offset = 0;
    for (k, (inputs, outputs)) in dims.iter().enumerate() {
        let x = &cache.activations[k];
        let w = &params.0[offset..offset + inputs * outputs];
        let tw = &tangent.0[offset..offset + inputs * outputs];
        let tb = &tangent.0[offset + inputs * outputs..offset + inputs * outputs + outputs];
        let mut dz: Vec<f64> = (0..*outputs)
            .map(|o| {
                let r = o * inputs..(o + 1) * inputs;
                dot(&tw[r.clone()], x) + dot(&w[r], &dx) + tb[o]
            })
            .collect();
        if k + 1 < dims.len() {
            let a = &cache.activations[k + 1];
            for (d, ai) in dz.iter_mut().zip(a) {
                *d *= 1.0 - ai * ai;
            }
        }
        offset += inputs * outputs + outputs;
        dx = dz;
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straightforward evaluator over unpacked layers, written independently
    /// of the flat-vector path.
    fn reference_forward(layers: &[Layer], input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        for (k, l) in layers.iter().enumerate() {
            let mut y = vec![0.0; l.outputs];
            for o in 0..l.outputs {
                let mut s = l.bias[o];
                for i in 0..l.inputs {
                    s += l.weights[o * l.inputs + i] * x[i];
                }
                y[o] = if k + 1 < layers.len() { s.tanh() } else { s };
            }
            x = y;
        }
        x
    }

    #[test]
    fn zero_params_give_zero_output() {
        let spec = MlpSpec::new(5, vec![7, 3], 2).unwrap();
        let p = ParamVector::zeros(spec.param_count());
        assert_eq!(forward(&spec, &p, &[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer() {
        let spec = MlpSpec::new(3, vec![], 3).unwrap();
        let mut w = vec![0.0; 12];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let out = forward(&spec, &ParamVector(w), &[0.3, -1.2, 4.0]).unwrap();
        assert_eq!(out, vec![0.3, -1.2, 4.0]);
    }

    #[test]
    fn matches_reference_evaluator() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = MlpSpec::new(9, vec![64, 64], 4).unwrap();
        let p = spec.init_params(&mut rng, 1.0);
        let x: Vec<f64> = (0..9).map(|_| rng.random_range(-2.0..2.0)).collect();
        let layers = unflatten(&spec, &p).unwrap();
        let a = forward(&spec, &p, &x).unwrap();
        let b = reference_forward(&layers, &x);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
        assert_eq!(flatten(&layers), p);
    }

    #[test]
    fn linear_layer_gradient_is_input() {
        let spec = MlpSpec::new(3, vec![], 2).unwrap();
        let p = ParamVector(vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6, 0.7, 0.8]);
        let x = [1.5, -2.0, 0.25];
        let g = backward(&spec, &p, &x, &[1.0, 0.0]).unwrap();
        assert_eq!(&g.0[0..3], &x);
        assert_eq!(&g.0[3..6], &[0.0; 3]);
        assert_eq!(&g.0[6..8], &[1.0, 0.0]);
    }

    #[test]
    fn zero_output_gradient() {
        let spec = MlpSpec::new(4, vec![6], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = spec.init_params(&mut rng, 1.0);
        let g = backward(&spec, &p, &[0.1, 0.2, 0.3, 0.4], &[0.0; 3]).unwrap();
        assert!(g.0.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = MlpSpec::new(3, vec![6, 5], 2).unwrap();
        let p = spec.init_params(&mut rng, 1.0);
        let x = [0.4, -0.7, 1.1];
        let w = [0.8, -1.3];
        let g = backward(&spec, &p, &x, &w).unwrap();
        let f = |q: &ParamVector| dot(&forward(&spec, q, &x).unwrap(), &w);
        let h = 1e-5;
        for i in 0..p.len() {
            let mut plus = p.clone();
            plus.0[i] += h;
            let mut minus = p.clone();
            minus.0[i] -= h;
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            let scale = fd.abs().max(g.0[i].abs()).max(1e-6);
            assert!((fd - g.0[i]).abs() / scale < 1e-4, "param {i}: {fd} vs {}", g.0[i]);
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = MlpSpec::new(4, vec![8], 1).unwrap();
        let p = spec.init_params(&mut rng, 1.0);
        let x = [0.2, -0.1, 0.7, -0.9];
        let cache = forward_cached(&spec, &p, &x).unwrap();
        let mut g = vec![0.0; p.len()];
        let mut gx = vec![0.0; 4];
        backward_cached(&spec, &p, &cache, &[1.0], &mut g, Some(&mut gx)).unwrap();
        for i in 0..4 {
            let mut a = x;
            a[i] += 1e-6;
            let mut b = x;
            b[i] -= 1e-6;
            let fd = (forward(&spec, &p, &a).unwrap()[0] - forward(&spec, &p, &b).unwrap()[0]) / 2e-6;
            assert!((fd - gx[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn jvp_matches_directional_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = MlpSpec::new(3, vec![5, 4], 2).unwrap();
        let p = spec.init_params(&mut rng, 1.0);
        let t = spec.init_params(&mut rng, 1.0);
        let x = [0.3, 0.1, -0.5];
        let cache = forward_cached(&spec, &p, &x).unwrap();
        let jv = jvp_cached(&spec, &p, &cache, &t).unwrap();
        let h = 1e-6;
        let mut plus = p.clone();
        plus.axpy(h, &t);
        let mut minus = p.clone();
        minus.axpy(-h, &t);
        let a = forward(&spec, &plus, &x).unwrap();
        let b = forward(&spec, &minus, &x).unwrap();
        for k in 0..2 {
            assert!(((a[k] - b[k]) / (2.0 * h) - jv[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn dimension_errors() {
        let spec = MlpSpec::new(3, vec![4], 2).unwrap();
        let p = ParamVector::zeros(spec.param_count());
        assert!(matches!(
            forward(&spec, &p, &[1.0, 2.0]),
            Err(CdprError::DimensionMismatch { expected: 3, found: 2 })
        ));
        assert!(forward(&spec, &ParamVector::zeros(3), &[1.0, 2.0, 3.0]).is_err());
        assert!(backward(&spec, &p, &[1.0, 2.0, 3.0], &[1.0]).is_err());
        assert!(MlpSpec::new(3, vec![0], 2).is_err());
    }
}
