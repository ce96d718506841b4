use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, Axis, Ix1, Ix2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::param::{ParamId, ParamSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Relu,
    Elu,
    Tanh,
    /// Element-wise absolute value. Only used on hypernetwork heads that emit
    /// mixing weights, where it enforces non-negativity.
    AbsOnWeights,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::AbsOnWeights => z.abs(),
        }
    }

    /// Derivative with respect to the pre-activation.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::AbsOnWeights => {
                if z > 0.0 {
                    1.0
                } else if z < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl DenseSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// Intermediates kept by a forward pass so the matching backward can run.
#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Array2<f64>,
    pre_activation: Array2<f64>,
}

/// `activation(x · W + b)` with `W: [in × out]`, `b: [out]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub name: String,
    pub spec: DenseSpec,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    /// Registers `{name}.weight` and `{name}.bias`, uniform in ±1/√in_dim.
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        spec: DenseSpec,
        rng: &mut R,
    ) -> Result<Self> {
        if spec.in_dim == 0 || spec.out_dim == 0 {
            return Err(Error::Config(format!(
                "layer `{name}` needs positive dimensions, got {}x{}",
                spec.in_dim, spec.out_dim
            )));
        }
        let bound = 1.0 / (spec.in_dim as f64).sqrt();
        let weight = params.add_uniform(
            format!("{name}.weight"),
            &[spec.in_dim, spec.out_dim],
            bound,
            rng,
        )?;
        let bias = params.add_uniform(format!("{name}.bias"), &[spec.out_dim], bound, rng)?;
        Ok(Self {
            name: name.to_string(),
            spec,
            weight,
            bias,
        })
    }

    fn check_input(&self, input: &ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.spec.in_dim {
            return Err(Error::dim(
                format!("layer `{}` input width", self.name),
                self.spec.in_dim,
                input.ncols(),
            ));
        }
        Ok(())
    }

    fn pre_activation(&self, params: &ParamSet, input: &ArrayView2<f64>) -> Array2<f64> {
        let w = params
            .get(self.weight)
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("weight is 2-d");
        let b = params
            .get(self.bias)
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .expect("bias is 1-d");
        let mut z = b
            .broadcast((input.nrows(), self.spec.out_dim))
            .expect("bias broadcasts over rows")
            .to_owned();
        general_mat_mul(1.0, input, &w, 1.0, &mut z);
        z
    }

    pub fn forward(
        &self,
        params: &ParamSet,
        input: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, DenseCache)> {
        self.check_input(&input)?;
        let z = self.pre_activation(params, &input);
        let act = self.spec.activation;
        let out = z.mapv(|v| act.apply(v));
        Ok((
            out,
            DenseCache {
                input: input.to_owned(),
                pre_activation: z,
            },
        ))
    }

    /// Forward pass without keeping intermediates.
    pub fn predict(&self, params: &ParamSet, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&input)?;
        let mut z = self.pre_activation(params, &input);
        let act = self.spec.activation;
        z.mapv_inplace(|v| act.apply(v));
        Ok(z)
    }

    /// Accumulates weight/bias gradients and returns the gradient w.r.t. the input.
    pub fn backward(
        &self,
        params: &mut ParamSet,
        cache: &DenseCache,
        grad_out: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        if grad_out.dim() != cache.pre_activation.dim() {
            return Err(Error::dim(
                format!("layer `{}` output gradient", self.name),
                format!("{:?}", cache.pre_activation.dim()),
                format!("{:?}", grad_out.dim()),
            ));
        }
        let act = self.spec.activation;
        let mut dz = grad_out.to_owned();
        if act != Activation::Identity {
            Zip::from(&mut dz)
                .and(&cache.pre_activation)
                .for_each(|g, &z| *g *= act.derivative(z));
        }
        {
            let mut gw = params
                .get_mut(self.weight)
                .grad
                .view_mut()
                .into_dimensionality::<Ix2>()
                .expect("weight grad is 2-d");
            general_mat_mul(1.0, &cache.input.t(), &dz, 1.0, &mut gw);
        }
        {
            let gb = &mut params.get_mut(self.bias).grad;
            let col_sums = dz.sum_axis(Axis(0));
            gb.zip_mut_with(&col_sums.into_dyn(), |g, s| *g += s);
        }
        let w = params
            .get(self.weight)
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("weight is 2-d");
        Ok(dz.dot(&w.t()))
    }
}

/// Tape produced by [`Mlp::forward`]; consumed by [`Mlp::backward`].
#[derive(Debug, Clone, Default)]
pub struct MlpTape {
    layers: Vec<DenseCache>,
}

impl MlpTape {
    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

/// A stack of [`Dense`] layers.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub name: String,
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// Builds layers `{name}.0`, `{name}.1`, ... from consecutive specs.
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        specs: &[DenseSpec],
        rng: &mut R,
    ) -> Result<Self> {
        for pair in specs.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Config(format!(
                    "`{name}`: layer widths do not chain ({} -> {})",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, spec)| Dense::new(params, &format!("{name}.{i}"), *spec, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: name.to_string(),
            layers,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.out_dim
    }

    pub fn forward(&self, params: &ParamSet, input: ArrayView2<f64>) -> Result<(Array2<f64>, MlpTape)> {
        let mut tape = MlpTape {
            layers: Vec::with_capacity(self.layers.len()),
        };
        let mut x: Option<Array2<f64>> = None;
        for layer in &self.layers {
            let (out, cache) = match &x {
                None => layer.forward(params, input.view())?,
                Some(h) => layer.forward(params, h.view())?,
            };
            tape.layers.push(cache);
            x = Some(out);
        }
        Ok((x.expect("at least one layer"), tape))
    }

    pub fn predict(&self, params: &ParamSet, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut x = self.layers[0].predict(params, input)?;
        for layer in &self.layers[1..] {
            x = layer.predict(params, x.view())?;
        }
        Ok(x)
    }

    /// Accumulates parameter gradients (`+=`) and returns the input gradient.
    pub fn backward(
        &self,
        params: &mut ParamSet,
        tape: &MlpTape,
        grad_out: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        if tape.layers.len() != self.layers.len() {
            return Err(Error::Usage(format!(
                "backward on `{}` without a matching forward pass",
                self.name
            )));
        }
        let mut g = grad_out.to_owned();
        for (layer, cache) in self.layers.iter().zip(&tape.layers).rev() {
            g = layer.backward(params, cache, g.view())?;
        }
        Ok(g)
    }
}
