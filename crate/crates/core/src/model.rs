//! Layered network description: topology, symmetric weights, and state.
//!
//! Layers are ordered input → output. Connection `k` joins layer `k` (lower)
//! and layer `k + 1` (upper) through a single weight tensor used in both
//! directions: the upper layer is driven by `F_k(lower)` and the lower layer by
//! the adjoint `F_kᵀ(upper)`. Dense weights are stored `[in × out]`; conv
//! kernels `[C_out × C_in × K × K]`, optionally followed by max pooling.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{
    self, conv2d, conv2d_adjoint, conv2d_kernel_grad, conv_output_size, maxpool, pool_output_size,
    unpool, IndexMap, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pool {
    pub window: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense {
        units: usize,
    },
    Conv {
        channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        pool: Option<Pool>,
    },
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Dense { units } => write!(f, "fc:{units}"),
            LayerSpec::Conv {
                channels,
                kernel,
                stride,
                padding,
                pool,
            } => {
                write!(f, "conv:{channels}k{kernel}s{stride}p{padding}")?;
                if let Some(p) = pool {
                    write!(f, "/pool{}s{}", p.window, p.stride)?;
                }
                Ok(())
            }
        }
    }
}

fn parse_num(s: &str, what: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Format(format!("bad {what} `{s}` in layer spec")))
}

// `k5s1p1` → (5, 1, 1)
fn parse_ksp(s: &str) -> Result<(usize, usize, usize)> {
    let k = s
        .strip_prefix('k')
        .ok_or_else(|| Error::Format(format!("expected k<size> in `{s}`")))?;
    let (k, rest) = k
        .split_once('s')
        .ok_or_else(|| Error::Format(format!("expected s<stride> in `{s}`")))?;
    let (st, p) = rest
        .split_once('p')
        .ok_or_else(|| Error::Format(format!("expected p<pad> in `{s}`")))?;
    Ok((
        parse_num(k, "kernel")?,
        parse_num(st, "stride")?,
        parse_num(p, "padding")?,
    ))
}

impl FromStr for LayerSpec {
    type Err = Error;

    /// `fc:512` or `conv:64k5s1p1` with an optional `/pool3s3` suffix.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(units) = s.strip_prefix("fc:") {
            return Ok(LayerSpec::Dense {
                units: parse_num(units, "units")?,
            });
        }
        let body = s
            .strip_prefix("conv:")
            .ok_or_else(|| Error::Format(format!("unknown layer `{s}`")))?;
        let (conv, pool) = match body.split_once('/') {
            Some((c, p)) => (c, Some(p)),
            None => (body, None),
        };
        let split = conv
            .find('k')
            .ok_or_else(|| Error::Format(format!("expected k<size> in `{conv}`")))?;
        let channels = parse_num(&conv[..split], "channels")?;
        let (kernel, stride, padding) = parse_ksp(&conv[split..])?;
        let pool = match pool {
            None => None,
            Some(p) => {
                let p = p
                    .strip_prefix("pool")
                    .ok_or_else(|| Error::Format(format!("expected pool<w>s<stride> in `{p}`")))?;
                let (w, st) = p
                    .split_once('s')
                    .ok_or_else(|| Error::Format(format!("bad pool `{p}`")))?;
                Some(Pool {
                    window: parse_num(w, "pool window")?,
                    stride: parse_num(st, "pool stride")?,
                })
            }
        };
        Ok(LayerSpec::Conv {
            channels,
            kernel,
            stride,
            padding,
            pool,
        })
    }
}

/// Geometry of one connection, resolved against the layer shapes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Connection {
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Conv {
        /// `[C_in, H, W]` of the lower layer.
        in_shape: [usize; 3],
        /// `[C_out, O_H, O_W]` before pooling.
        conv_shape: [usize; 3],
        kernel: usize,
        stride: usize,
        padding: usize,
        pool: Option<Pool>,
    },
}

impl Connection {
    pub fn weight_shape(&self) -> Vec<usize> {
        match self {
            Connection::Dense {
                in_features,
                out_features,
            } => vec![*in_features, *out_features],
            Connection::Conv {
                in_shape,
                conv_shape,
                kernel,
                ..
            } => vec![conv_shape[0], in_shape[0], *kernel, *kernel],
        }
    }

    pub fn fans(&self) -> (usize, usize) {
        match self {
            Connection::Dense {
                in_features,
                out_features,
            } => (*in_features, *out_features),
            Connection::Conv {
                in_shape,
                conv_shape,
                kernel,
                ..
            } => (
                in_shape[0] * kernel * kernel,
                conv_shape[0] * kernel * kernel,
            ),
        }
    }

    fn conv_out(&self, weight: &Tensor, lower: &[f64]) -> Result<Tensor> {
        match self {
            Connection::Conv {
                in_shape,
                stride,
                padding,
                ..
            } => {
                let x = Tensor::new(in_shape.to_vec(), lower.to_vec())?;
                conv2d(&x, weight, *stride, *padding)
            }
            Connection::Dense { .. } => unreachable!("conv_out on dense connection"),
        }
    }

    /// Drive delivered to the upper layer, plus pooling indices when pooled.
    pub fn forward(&self, weight: &Tensor, lower: &[f64]) -> Result<(Vec<f64>, Option<IndexMap>)> {
        match self {
            Connection::Dense { out_features, .. } => {
                let mut out = vec![0.0; *out_features];
                linalg::vec_mat_acc(lower, weight.data(), *out_features, &mut out);
                Ok((out, None))
            }
            Connection::Conv { pool, .. } => {
                let y = self.conv_out(weight, lower)?;
                match pool {
                    None => Ok((y.into_data(), None)),
                    Some(p) => {
                        let (pooled, idx) = maxpool(&y, p.window, p.stride)?;
                        Ok((pooled.into_data(), Some(idx)))
                    }
                }
            }
        }
    }

    fn unpooled(&self, upper: &[f64], idx: Option<&IndexMap>) -> Result<Tensor> {
        let Connection::Conv {
            conv_shape, pool, ..
        } = self
        else {
            unreachable!("unpooled on dense connection")
        };
        match (pool, idx) {
            (None, _) => Tensor::new(conv_shape.to_vec(), upper.to_vec()),
            (Some(_), Some(idx)) => {
                let pooled_shape = [conv_shape[0], upper.len() / conv_shape[0].max(1), 1];
                let pooled = Tensor::new(pooled_shape.to_vec(), upper.to_vec())?;
                unpool(&pooled, idx, conv_shape)
            }
            (Some(_), None) => Err(Error::Contract(
                "pooled connection needs forward indices".into(),
            )),
        }
    }

    /// Drive delivered to the lower layer (adjoint of [`Connection::forward`]
    /// with the pooling selection held fixed).
    pub fn feedback(
        &self,
        weight: &Tensor,
        upper: &[f64],
        idx: Option<&IndexMap>,
    ) -> Result<Vec<f64>> {
        match self {
            Connection::Dense {
                in_features,
                out_features,
            } => {
                let mut out = vec![0.0; *in_features];
                linalg::mat_vec_acc(weight.data(), *out_features, upper, &mut out);
                Ok(out)
            }
            Connection::Conv {
                in_shape,
                stride,
                padding,
                ..
            } => {
                let y = self.unpooled(upper, idx)?;
                Ok(
                    conv2d_adjoint(&y, weight, *stride, *padding, (in_shape[1], in_shape[2]))?
                        .into_data(),
                )
            }
        }
    }

    /// `upper · F(lower)`.
    pub fn interaction(&self, weight: &Tensor, lower: &[f64], upper: &[f64]) -> Result<f64> {
        let (drive, _) = self.forward(weight, lower)?;
        Ok(drive.iter().zip(upper).map(|(a, b)| a * b).sum())
    }

    /// Gradient of [`Connection::interaction`] with respect to the weight.
    pub fn interaction_grad(
        &self,
        weight: &Tensor,
        lower: &[f64],
        upper: &[f64],
    ) -> Result<Tensor> {
        match self {
            Connection::Dense {
                in_features,
                out_features,
            } => {
                let mut g = vec![0.0; in_features * out_features];
                for (j, &a) in lower.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    let row = &mut g[j * out_features..(j + 1) * out_features];
                    for (o, &b) in row.iter_mut().zip(upper) {
                        *o = a * b;
                    }
                }
                Tensor::new(vec![*in_features, *out_features], g)
            }
            Connection::Conv {
                in_shape,
                stride,
                padding,
                pool,
                ..
            } => {
                let idx = match pool {
                    Some(_) => self.forward(weight, lower)?.1,
                    None => None,
                };
                let y = self.unpooled(upper, idx.as_ref())?;
                let x = Tensor::new(in_shape.to_vec(), lower.to_vec())?;
                conv2d_kernel_grad(&x, &y, weight.shape(), *stride, *padding)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    input: Vec<usize>,
    layers: Vec<LayerSpec>,
    shapes: Vec<Vec<usize>>,
    connections: Vec<Connection>,
}

impl Topology {
    /// Resolve layer shapes; fails when a layer does not fit its input.
    pub fn new(input: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        if input.is_empty() || input.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!("invalid input shape {input:?}")));
        }
        let mut shapes = vec![input.clone()];
        let mut connections = Vec::with_capacity(layers.len());
        for spec in &layers {
            let lower = shapes.last().unwrap().clone();
            let lower_len: usize = lower.iter().product();
            let (conn, out_shape) = match *spec {
                LayerSpec::Dense { units } => {
                    if units == 0 {
                        return Err(Error::Dimension("dense layer with zero units".into()));
                    }
                    (
                        Connection::Dense {
                            in_features: lower_len,
                            out_features: units,
                        },
                        vec![units],
                    )
                }
                LayerSpec::Conv {
                    channels,
                    kernel,
                    stride,
                    padding,
                    pool,
                } => {
                    let [c, h, w] = lower[..] else {
                        return Err(Error::Dimension(format!(
                            "conv layer needs a C×H×W input, got {lower:?}"
                        )));
                    };
                    let oh = conv_output_size(h, kernel, stride, padding)?;
                    let ow = conv_output_size(w, kernel, stride, padding)?;
                    let out = match pool {
                        None => vec![channels, oh, ow],
                        Some(p) => vec![
                            channels,
                            pool_output_size(oh, p.window, p.stride)?,
                            pool_output_size(ow, p.window, p.stride)?,
                        ],
                    };
                    (
                        Connection::Conv {
                            in_shape: [c, h, w],
                            conv_shape: [channels, oh, ow],
                            kernel,
                            stride,
                            padding,
                            pool,
                        },
                        out,
                    )
                }
            };
            connections.push(conn);
            shapes.push(out_shape);
        }
        Ok(Self {
            input,
            layers,
            shapes,
            connections,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Shapes of every layer, index 0 being the clamped input.
    pub fn layer_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn layer_len(&self, layer: usize) -> usize {
        self.shapes[layer].iter().product()
    }

    pub fn connections(&self) -> &[Connection] {
        &self.connections
    }

    pub fn output_len(&self) -> usize {
        self.layer_len(self.shapes.len() - 1)
    }

    pub fn num_weights(&self) -> usize {
        self.connections
            .iter()
            .map(|c| c.weight_shape().iter().product::<usize>())
            .sum()
    }

    /// Replace the width of the final (dense) layer.
    pub fn with_output_width(&self, units: usize) -> Result<Self> {
        let mut layers = self.layers.clone();
        match layers.last_mut() {
            Some(LayerSpec::Dense { units: u }) => *u = units,
            _ => return Err(Error::Dimension("output layer must be dense".into())),
        }
        Self::new(self.input.clone(), layers)
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = self.input.iter().map(|d| d.to_string()).collect();
        write!(f, "in:{}", dims.join("x"))?;
        for l in &self.layers {
            write!(f, " {l}")?;
        }
        Ok(())
    }
}

impl FromStr for Topology {
    type Err = Error;

    /// `in:1x28x28 conv:64k5s1p1/pool3s3 fc:700`
    fn from_str(s: &str) -> Result<Self> {
        let mut tokens = s.split_whitespace();
        let input = tokens
            .next()
            .and_then(|t| t.strip_prefix("in:"))
            .ok_or_else(|| Error::Format(format!("topology must start with in:<shape>: `{s}`")))?;
        let input = parse_shape(input)?;
        let layers = tokens.map(str::parse).collect::<Result<Vec<_>>>()?;
        Self::new(input, layers)
    }
}

/// `1x28x28` → `[1, 28, 28]`
pub fn parse_shape(s: &str) -> Result<Vec<usize>> {
    s.split('x')
        .map(|d| parse_num(d.trim(), "dimension"))
        .collect()
}

/// One weight tensor per connection.
#[derive(Debug, Clone, PartialEq)]
pub struct Params(pub Vec<Tensor>);

impl Params {
    pub fn zeros_for(topology: &Topology) -> Self {
        Self(
            topology
                .connections()
                .iter()
                .map(|c| Tensor::zeros(&c.weight_shape()))
                .collect(),
        )
    }

    pub fn zeros_like(&self) -> Self {
        Self(self.0.iter().map(|t| Tensor::zeros(t.shape())).collect())
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &Params) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.axpy(alpha, b);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.0.iter_mut().for_each(|t| t.scale(alpha));
    }

    pub fn num_weights(&self) -> usize {
        self.0.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(Tensor::is_finite)
    }

    pub fn shapes_match(&self, other: &Params) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| a.shape() == b.shape())
    }

    /// Per-connection cosine similarity.
    pub fn cosine(&self, other: &Params) -> Vec<f64> {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| {
                let denom = (a.norm_sq() * b.norm_sq()).sqrt();
                if denom == 0.0 {
                    0.0
                } else {
                    a.dot(b) / denom
                }
            })
            .collect()
    }
}

/// Membrane potentials of every non-input layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState(pub Vec<Tensor>);

impl NetworkState {
    pub fn zeros(topology: &Topology) -> Self {
        Self(
            topology.layer_shapes()[1..]
                .iter()
                .map(|s| Tensor::zeros(s))
                .collect(),
        )
    }

    pub fn output(&self) -> &Tensor {
        self.0.last().expect("network has at least one layer")
    }

    pub fn check(&self, topology: &Topology) -> Result<()> {
        let shapes = &topology.layer_shapes()[1..];
        if self.0.len() != shapes.len()
            || self.0.iter().zip(shapes).any(|(t, s)| t.shape() != &s[..])
        {
            return Err(Error::Dimension(
                "state shapes do not match topology".into(),
            ));
        }
        Ok(())
    }
}

/// Topology, symmetric weights and firing gain.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub topology: Topology,
    pub params: Params,
    pub kappa: f64,
}

impl Network {
    /// Uniform init in `±√(6 / (fan_in + fan_out))` per connection.
    pub fn init(topology: Topology, kappa: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Params(
            topology
                .connections()
                .iter()
                .map(|c| {
                    let (fi, fo) = c.fans();
                    let bound = (6.0 / (fi + fo) as f64).sqrt();
                    Tensor::from_fn(&c.weight_shape(), |_| rng.random_range(-bound..bound))
                })
                .collect(),
        );
        Self {
            topology,
            params,
            kappa,
        }
    }

    pub fn with_params(topology: Topology, params: Params, kappa: f64) -> Result<Self> {
        if !params.shapes_match(&Params::zeros_for(&topology)) {
            return Err(Error::Dimension(
                "parameter shapes do not match topology".into(),
            ));
        }
        Ok(Self {
            topology,
            params,
            kappa,
        })
    }

    pub fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.topology.layer_len(0) {
            return Err(Error::Dimension(format!(
                "input has {} values, topology expects {}",
                x.len(),
                self.topology.layer_len(0)
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topology_roundtrip_and_shapes() {
        let t: Topology = "in:1x28x28 conv:64k5s1p1/pool3s3 conv:128k5s1p1/pool3s3 fc:700"
            .parse()
            .unwrap();
        assert_eq!(
            t.layer_shapes(),
            &[vec![1, 28, 28], vec![64, 8, 8], vec![128, 2, 2], vec![700]]
        );
        assert_eq!(t.to_string().parse::<Topology>().unwrap(), t);
        let fc: Topology = "in:784 fc:512 fc:100".parse().unwrap();
        assert_eq!(fc.num_weights(), 784 * 512 + 512 * 100);
    }

    #[test]
    fn bad_topologies_rejected() {
        assert!("in:1x4x4 conv:2k5s1p0".parse::<Topology>().is_err());
        assert!("in:784 conv:2k3s1p0".parse::<Topology>().is_err());
        assert!("fc:10".parse::<Topology>().is_err());
        assert!("in:10 mystery:3".parse::<Topology>().is_err());
    }

    #[test]
    fn init_bounds() {
        let t: Topology = "in:20 fc:10".parse().unwrap();
        let net = Network::init(t, 2.0, 1);
        let bound = (6.0f64 / 30.0).sqrt();
        assert!(net.params.0[0].data().iter().all(|v| v.abs() < bound));
        assert_eq!(net, Network::init("in:20 fc:10".parse().unwrap(), 2.0, 1));
    }

    #[test]
    fn conv_feedback_is_adjoint_of_forward_on_fixed_selection() {
        let t: Topology = "in:2x6x6 conv:3k3s1p1/pool2s2".parse().unwrap();
        let net = Network::init(t, 1.0, 3);
        let conn = &net.topology.connections()[0];
        let w = &net.params.0[0];
        let lower: Vec<f64> = (0..72).map(|i| ((i * 7) % 11) as f64 / 11.0).collect();
        let upper: Vec<f64> = (0..27).map(|i| ((i * 5) % 7) as f64 / 7.0 - 0.3).collect();
        let (drive, idx) = conn.forward(w, &lower).unwrap();
        let fb = conn.feedback(w, &upper, idx.as_ref()).unwrap();
        let lhs: f64 = drive.iter().zip(&upper).map(|(a, b)| a * b).sum();
        let rhs: f64 = fb.iter().zip(&lower).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        // The weight gradient of a bilinear form reproduces the form.
        let g = conn.interaction_grad(w, &lower, &upper).unwrap();
        assert!((g.dot(w) - lhs).abs() < 1e-12);
    }
}
