//! Fully connected ReLU network with a linear head split into means and
//! log-variances.

use std::io::{BufRead, Write};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Log-variance outputs are clamped to this range.
pub const LOGVAR_CLAMP: f64 = 20.0;

/// Dense layer computing `x·W + b`; `weights` is `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub seed: u64,
}

impl MlpParams {
    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].weights.nrows()];
        d.extend(self.layers.iter().map(|l| l.weights.ncols()));
        d
    }

    /// Number of (μ, log σ²) pairs produced.
    pub fn horizon(&self) -> usize {
        self.layers.last().expect("non-empty network").weights.ncols() / 2
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Euclidean norm over all weights and biases.
    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

/// He-initialised hidden layers, Glorot-initialised output layer, zero
/// biases. `dims` lists widths from input to output; the output width
/// must be even.
pub fn init_mlp(dims: &[usize], seed: u64) -> Result<MlpParams> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::Invalid(format!("invalid network shape {dims:?}")));
    }
    if !dims[dims.len() - 1].is_multiple_of(2) {
        return Err(Error::Invalid("output width must hold mean and log-variance pairs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = dims.len() - 2;
    let layers = (0..dims.len() - 1)
        .map(|i| {
            let (fan_in, fan_out) = (dims[i], dims[i + 1]);
            let var = if i == last {
                2.0 / (fan_in + fan_out) as f64
            } else {
                2.0 / fan_in as f64
            };
            let normal = Normal::new(0.0, var.sqrt()).expect("positive variance");
            Layer {
                weights: Array2::from_shape_simple_fn((fan_in, fan_out), || normal.sample(&mut rng)),
                bias: Array1::zeros(fan_out),
            }
        })
        .collect();
    Ok(MlpParams { layers, seed })
}

/// Inverted-dropout setting for one forward pass.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

/// Intermediate values kept for back-propagation.
pub(crate) struct Cache {
    /// Input to each layer (post-activation, post-dropout).
    pub inputs: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers.
    pub pre: Vec<Array2<f64>>,
    /// Dropout multipliers of hidden layers (0 or 1/(1-rate)).
    pub masks: Vec<Option<Array2<f64>>>,
    /// Raw log-variance outputs before clamping.
    pub raw_logvar: Array2<f64>,
}

pub(crate) fn forward_cached(
    params: &MlpParams,
    x: ArrayView2<f64>,
    mut dropout: Option<Dropout>,
) -> (Array2<f64>, Array2<f64>, Cache) {
    let n_layers = params.layers.len();
    let mut a = x.to_owned();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut pre = Vec::with_capacity(n_layers - 1);
    let mut masks = Vec::with_capacity(n_layers - 1);
    for (i, layer) in params.layers.iter().enumerate() {
        let z = a.dot(&layer.weights) + &layer.bias;
        inputs.push(a);
        if i + 1 == n_layers {
            let k = z.ncols() / 2;
            let mu = z.slice(s![.., ..k]).to_owned();
            let raw = z.slice(s![.., k..]).to_owned();
            let logvar = raw.mapv(|v| v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP));
            return (
                mu,
                logvar,
                Cache {
                    inputs,
                    pre,
                    masks,
                    raw_logvar: raw,
                },
            );
        }
        let mut h = z.mapv(|v| v.max(0.0));
        let mask = match dropout.as_mut() {
            Some(d) if d.rate > 0.0 => {
                let keep = 1.0 / (1.0 - d.rate);
                let m = Array2::from_shape_simple_fn(h.raw_dim(), || {
                    if d.rng.random::<f64>() < d.rate {
                        0.0
                    } else {
                        keep
                    }
                });
                h *= &m;
                Some(m)
            }
            _ => None,
        };
        pre.push(z);
        masks.push(mask);
        a = h;
    }
    unreachable!("network has an output layer")
}

/// Batch forward pass returning `(μ, log σ²)`, each `batch × horizon`.
pub fn forward(
    params: &MlpParams,
    x: ArrayView2<f64>,
    dropout: Option<Dropout>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if x.ncols() != params.layers[0].weights.nrows() {
        return Err(Error::Invalid(format!(
            "network expects {} inputs, got {}",
            params.layers[0].weights.nrows(),
            x.ncols()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network input"));
    }
    let (mu, lv, _) = forward_cached(params, x, dropout);
    Ok((mu, lv))
}

/// Gradients with the same layout as the parameters.
#[derive(Debug, Clone)]
pub(crate) struct Grads {
    pub layers: Vec<Layer>,
}

/// Back-propagates output gradients `d_mu`, `d_logvar` (w.r.t. the clamped
/// log-variance).
pub(crate) fn backward(params: &MlpParams, cache: &Cache, d_mu: &Array2<f64>, d_logvar: &Array2<f64>) -> Grads {
    let n_layers = params.layers.len();
    let k = d_mu.ncols();
    let mut dz = Array2::zeros((d_mu.nrows(), 2 * k));
    dz.slice_mut(s![.., ..k]).assign(d_mu);
    let mut dlv = d_logvar.clone();
    ndarray::Zip::from(&mut dlv)
        .and(&cache.raw_logvar)
        .for_each(|g, &r| {
            if !(-LOGVAR_CLAMP..=LOGVAR_CLAMP).contains(&r) {
                *g = 0.0;
            }
        });
    dz.slice_mut(s![.., k..]).assign(&dlv);

    let mut grads: Vec<Layer> = Vec::with_capacity(n_layers);
    for i in (0..n_layers).rev() {
        let input = &cache.inputs[i];
        let dw = input.t().dot(&dz);
        let db = dz.sum_axis(Axis(0));
        if i > 0 {
            let mut da = dz.dot(&params.layers[i].weights.t());
            if let Some(m) = &cache.masks[i - 1] {
                da *= m;
            }
            ndarray::Zip::from(&mut da)
                .and(&cache.pre[i - 1])
                .for_each(|g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
            dz = da;
        }
        grads.push(Layer { weights: dw, bias: db });
    }
    grads.reverse();
    Grads { layers: grads }
}

/// Gradients of a scalar loss with respect to every parameter, given the
/// loss gradients `d_mu`, `d_logvar` at the outputs of a deterministic
/// forward pass on `x`. Layout matches `params.layers`.
pub fn param_gradients(
    params: &MlpParams,
    x: ArrayView2<f64>,
    d_mu: &Array2<f64>,
    d_logvar: &Array2<f64>,
) -> Result<Vec<Layer>> {
    let (mu, _, cache) = forward_cached(params, x, None);
    if d_mu.dim() != mu.dim() || d_logvar.dim() != mu.dim() {
        return Err(Error::Invalid(format!(
            "output gradients must be {:?}, got {:?} and {:?}",
            mu.dim(),
            d_mu.dim(),
            d_logvar.dim()
        )));
    }
    Ok(backward(params, &cache, d_mu, d_logvar).layers)
}

/// Writes the parameters as text: a shape header followed by each tensor,
/// one matrix row per line.
pub fn write_params<W: Write>(params: &MlpParams, mut w: W) -> Result<()> {
    let io = |e| Error::io("<network parameters>", e);
    let dims: Vec<String> = params.dims().iter().map(|d| d.to_string()).collect();
    writeln!(w, "mlp,{},{}", params.seed, dims.join(",")).map_err(io)?;
    for (i, l) in params.layers.iter().enumerate() {
        writeln!(w, "w{i},{},{}", l.weights.nrows(), l.weights.ncols()).map_err(io)?;
        for row in l.weights.rows() {
            let r: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", r.join(",")).map_err(io)?;
        }
        writeln!(w, "b{i},1,{}", l.bias.len()).map_err(io)?;
        let r: Vec<String> = l.bias.iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", r.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_params<R: BufRead>(r: R) -> Result<MlpParams> {
    let bad = |m: &str| Error::Invalid(format!("network parameter file: {m}"));
    let mut lines = r.lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| bad("unexpected end of file"))?
            .map_err(|e| Error::io("<network parameters>", e))
    };
    let header = next()?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.first() != Some(&"mlp") || fields.len() < 4 {
        return Err(bad("missing shape header"));
    }
    let seed: u64 = fields[1].parse().map_err(|_| bad("seed"))?;
    let dims: Vec<usize> = fields[2..]
        .iter()
        .map(|d| d.parse().map_err(|_| bad("shape")))
        .collect::<Result<_>>()?;
    let parse_row = |line: &str, n: usize| -> Result<Vec<f64>> {
        let v: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| bad("value")))
            .collect::<Result<_>>()?;
        if v.len() != n {
            return Err(bad("row width"));
        }
        Ok(v)
    };
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for i in 0..dims.len() - 1 {
        let (rows, cols) = (dims[i], dims[i + 1]);
        if next()? != format!("w{i},{rows},{cols}") {
            return Err(bad("tensor header"));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(parse_row(&next()?, cols)?);
        }
        if next()? != format!("b{i},1,{cols}") {
            return Err(bad("tensor header"));
        }
        let bias = Array1::from(parse_row(&next()?, cols)?);
        layers.push(Layer {
            weights: Array2::from_shape_vec((rows, cols), data).map_err(|_| bad("shape"))?,
            bias,
        });
    }
    let p = MlpParams { layers, seed };
    if !p.is_finite() {
        return Err(Error::NonFinite("network parameters"));
    }
    Ok(p)
}
