//! Graph convolutional encoder with a projection head and cosine similarity.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::LabeledGraph;
use crate::tensor::{dot, CsrMatrix, Matrix, Param, Tape, Var};

/// Norm regularizer used by every cosine in the model.
pub const COSINE_EPS: f64 = 1e-12;
/// Lower clamp on hop temperatures.
pub const MIN_TEMPERATURE: f64 = 0.01;
/// Slope used for the rrelu activation: midpoint of its `[1/8, 1/3]` range.
pub const RRELU_SLOPE: f64 = (1.0 / 8.0 + 1.0 / 3.0) / 2.0;
/// Initial slope of learnable prelu activations.
pub const PRELU_INIT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Prelu,
    Rrelu,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "prelu" => Ok(Activation::Prelu),
            "rrelu" => Ok(Activation::Rrelu),
            other => Err(Error::InvalidParameter(format!(
                "unknown activation {other:?}"
            ))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Prelu => "prelu",
            Activation::Rrelu => "rrelu",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    /// 1 or 2 graph convolution layers.
    pub layers: usize,
    /// Width of the first layer when `layers == 2`; defaults to `2 * embed_dim`.
    pub hidden_dim: Option<usize>,
    pub activation: Activation,
    pub tau_base: f64,
    pub tau_spacing: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            embed_dim: 64,
            layers: 1,
            hidden_dim: None,
            activation: Activation::Relu,
            tau_base: 0.5,
            tau_spacing: 0.0,
        }
    }
}

impl EncoderConfig {
    /// `τ_n = τ_base + (n − 1)·Δτ`, clamped below at 0.01.
    pub fn hop_temperature(&self, n: usize) -> f64 {
        hop_temperature(self.tau_base, self.tau_spacing, n)
    }

    fn hidden(&self) -> usize {
        self.hidden_dim.unwrap_or(2 * self.embed_dim)
    }
}

pub fn hop_temperature(tau_base: f64, tau_spacing: f64, n: usize) -> f64 {
    let n = n.max(1);
    (tau_base + (n - 1) as f64 * tau_spacing).max(MIN_TEMPERATURE)
}

/// `D^{-1/2}(A + I)D^{-1/2}` with binary entries: an existing self-loop is
/// not counted twice.
pub fn normalized_adjacency(g: &LabeledGraph) -> CsrMatrix {
    let n = g.num_nodes();
    let degree: Vec<f64> = (0..n)
        .map(|u| (g.degree(u) + usize::from(!g.has_edge(u, u))) as f64)
        .collect();
    let rows = (0..n)
        .map(|u| {
            let mut row: Vec<(usize, f64)> = g
                .neighbors(u)
                .iter()
                .map(|&v| (v, 1.0 / (degree[u] * degree[v]).sqrt()))
                .collect();
            if !g.has_edge(u, u) {
                let pos = row.partition_point(|&(v, _)| v < u);
                row.insert(pos, (u, 1.0 / degree[u]));
            }
            row
        })
        .collect();
    CsrMatrix::from_rows(n, rows).expect("adjacency rows stay in range")
}

/// Tape handles for one forward pass.
#[derive(Debug, Clone)]
pub struct Recorded {
    /// One handle per entry of [`Encoder::params`], in the same order.
    pub params: Vec<Var>,
    /// Encoder output `H`.
    pub h: Var,
    /// Projection head output `g(H)`.
    pub z: Var,
}

/// Encoder `f` plus projection head `g`. `θ(a, b) = cos(g(a), g(b))`.
#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    params: Vec<Param>,
    norm_adj: Arc<CsrMatrix>,
    input_dim: usize,
    graph_fingerprint: u64,
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sizes agree")
}

impl Encoder {
    /// Builds an encoder for `g`, which must carry node features.
    pub fn new(g: &LabeledGraph, config: EncoderConfig, seed: u64) -> Result<Self> {
        let x = g.features().ok_or(Error::MissingFeatures)?;
        if config.embed_dim == 0 {
            return Err(Error::InvalidParameter("embed_dim must be positive".into()));
        }
        if config.layers != 1 && config.layers != 2 {
            return Err(Error::InvalidParameter(format!(
                "layers must be 1 or 2, got {}",
                config.layers
            )));
        }
        if config.layers == 2 && config.hidden() == 0 {
            return Err(Error::InvalidParameter(
                "hidden_dim must be positive".into(),
            ));
        }
        let input_dim = x.cols();
        if config.embed_dim >= input_dim {
            log::warn!(
                "embedding dim {} is not smaller than feature dim {}",
                config.embed_dim,
                input_dim
            );
        }
        let d = config.embed_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        if config.layers == 1 {
            params.push(Param::new("enc.w1", glorot(input_dim, d, &mut rng)));
        } else {
            let h = config.hidden();
            params.push(Param::new("enc.w1", glorot(input_dim, h, &mut rng)));
            params.push(Param::new("enc.w2", glorot(h, d, &mut rng)));
        }
        params.push(Param::new("proj.w1", glorot(d, d, &mut rng)));
        params.push(Param::new("proj.b1", Matrix::zeros(1, d)));
        params.push(Param::new("proj.w2", glorot(d, d, &mut rng)));
        params.push(Param::new("proj.b2", Matrix::zeros(1, d)));
        if config.activation == Activation::Prelu {
            params.push(Param::new("enc.prelu", Matrix::filled(1, 1, PRELU_INIT)));
            params.push(Param::new("proj.prelu", Matrix::filled(1, 1, PRELU_INIT)));
        }
        Ok(Encoder {
            config,
            params,
            norm_adj: Arc::new(normalized_adjacency(g)),
            input_dim,
            graph_fingerprint: g.fingerprint(),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn norm_adj(&self) -> &CsrMatrix {
        &self.norm_adj
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn graph_fingerprint(&self) -> u64 {
        self.graph_fingerprint
    }

    pub fn param(&self, name: &str) -> Option<&Matrix> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .map(|p| &p.value)
    }

    /// Replaces a parameter value of the same shape.
    pub fn set_param(&mut self, name: &str, value: Matrix) -> Result<()> {
        let p = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::InvalidParameter(format!("no parameter named {name}")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_param",
                left: p.value.shape(),
                right: value.shape(),
            });
        }
        p.value = value;
        Ok(())
    }

    /// Errors unless `g` is the graph this encoder was built for.
    pub fn check_graph(&self, g: &LabeledGraph) -> Result<()> {
        if g.fingerprint() != self.graph_fingerprint {
            return Err(Error::GraphMismatch);
        }
        Ok(())
    }

    /// `Â·X`, the only part of the first layer that does not depend on weights.
    pub fn propagate_features(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "encoder input",
                left: (self.norm_adj.rows(), self.input_dim),
                right: x.shape(),
            });
        }
        self.norm_adj.mul_dense(x)
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    fn activate(&self, tape: &mut Tape, a: Var, slope: Option<Var>) -> Result<Var> {
        match self.config.activation {
            Activation::Relu => Ok(tape.relu(a)),
            Activation::Rrelu => Ok(tape.leaky(a, RRELU_SLOPE)),
            Activation::Prelu => tape.prelu(a, slope.expect("prelu slope registered")),
        }
    }

    /// Records `H = f(X)` and `Z = g(H)` given the propagated features `Â·X`.
    pub fn record(&self, tape: &mut Tape, propagated: &Matrix) -> Result<Recorded> {
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.param(p.name.clone(), p.value.clone()))
            .collect();
        let get = |name: &str| self.index(name).map(|i| vars[i]);
        let enc_slope = get("enc.prelu");
        let proj_slope = get("proj.prelu");

        let ax = tape.constant(propagated.clone());
        let mut h = tape.matmul(ax, get("enc.w1").expect("first layer"))?;
        h = self.activate(tape, h, enc_slope)?;
        if let Some(w2) = get("enc.w2") {
            let ah = tape.spmm(&self.norm_adj, h)?;
            h = tape.matmul(ah, w2)?;
            h = self.activate(tape, h, enc_slope)?;
        }
        let z = self.record_projection(tape, h, &vars, proj_slope)?;
        Ok(Recorded { params: vars, h, z })
    }

    fn record_projection(
        &self,
        tape: &mut Tape,
        h: Var,
        vars: &[Var],
        slope: Option<Var>,
    ) -> Result<Var> {
        let get = |name: &str| vars[self.index(name).expect("projection parameter")];
        let mut z = tape.matmul(h, get("proj.w1"))?;
        z = tape.add_row(z, get("proj.b1"))?;
        z = self.activate(tape, z, slope)?;
        z = tape.matmul(z, get("proj.w2"))?;
        tape.add_row(z, get("proj.b2"))
    }

    /// Node representations `H` for features `x`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let propagated = self.propagate_features(x)?;
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, &propagated)?;
        Ok(tape.value(rec.h).clone())
    }

    /// Projection head applied to the rows of `h`.
    pub fn project(&self, h: &Matrix) -> Result<Matrix> {
        if h.cols() != self.config.embed_dim {
            return Err(Error::ShapeMismatch {
                op: "project",
                left: (h.rows(), self.config.embed_dim),
                right: h.shape(),
            });
        }
        let mut tape = Tape::new();
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.constant(p.value.clone()))
            .collect();
        let slope = self.index("proj.prelu").map(|i| vars[i]);
        let hv = tape.constant(h.clone());
        let z = self.record_projection(&mut tape, hv, &vars, slope)?;
        Ok(tape.value(z).clone())
    }

    /// `θ(h_i, h_j)`: cosine of the projected vectors.
    pub fn theta(&self, h_i: &[f64], h_j: &[f64]) -> Result<f64> {
        let d = self.config.embed_dim;
        if h_i.len() != d || h_j.len() != d {
            return Err(Error::ShapeMismatch {
                op: "theta",
                left: (1, h_i.len()),
                right: (1, h_j.len()),
            });
        }
        let mut data = h_i.to_vec();
        data.extend_from_slice(h_j);
        let z = self.project(&Matrix::from_vec(2, d, data)?)?;
        Ok(cosine(z.row(0), z.row(1)))
    }

    pub fn hop_temperature(&self, n: usize) -> f64 {
        self.config.hop_temperature(n)
    }
}

/// Cosine with the eps-regularized norm `sqrt(‖v‖² + eps²)`.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = (dot(a, a) + COSINE_EPS * COSINE_EPS).sqrt();
    let nb = (dot(b, b) + COSINE_EPS * COSINE_EPS).sqrt();
    dot(a, b) / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;

    fn tiny(features: Matrix, edges: &[(usize, usize)], loops: bool) -> LabeledGraph {
        let n = features.rows();
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        build_graph(edges, &labels, None, Some(features), loops).unwrap()
    }

    #[test]
    fn hop_temperatures() {
        assert_eq!(hop_temperature(0.3, 0.0, 5), 0.3);
        assert!((hop_temperature(0.5, 0.1, 3) - 0.7).abs() < 1e-15);
        assert_eq!(hop_temperature(0.1, -0.05, 4), 0.01);
    }

    #[test]
    fn two_node_normalization() {
        let g = tiny(Matrix::identity(2), &[(0, 1)], false);
        let a = normalized_adjacency(&g).to_dense();
        for v in a.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
        let with_loops = normalized_adjacency(&tiny(Matrix::identity(2), &[(0, 1)], true));
        assert_eq!(with_loops.to_dense(), a);
    }

    #[test]
    fn isolated_node_row() {
        let g = build_graph(&[], &[0], None, Some(Matrix::filled(1, 3, 1.0)), true).unwrap();
        assert_eq!(normalized_adjacency(&g).to_dense().data(), &[1.0]);
    }

    #[test]
    fn seeded_init_is_identical() {
        let g = tiny(Matrix::filled(4, 6, 0.5), &[(0, 1), (1, 2), (2, 3)], true);
        let cfg = EncoderConfig {
            embed_dim: 3,
            ..EncoderConfig::default()
        };
        let a = Encoder::new(&g, cfg.clone(), 17).unwrap();
        let b = Encoder::new(&g, cfg.clone(), 17).unwrap();
        assert_eq!(a.params(), b.params());
        let c = Encoder::new(&g, cfg, 18).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn missing_features_and_bad_dims() {
        let g = build_graph(&[(0, 1)], &[0, 1], None, None, true).unwrap();
        assert!(matches!(
            Encoder::new(&g, EncoderConfig::default(), 0),
            Err(Error::MissingFeatures)
        ));
        let g = tiny(Matrix::identity(2), &[(0, 1)], true);
        let cfg = EncoderConfig {
            embed_dim: 0,
            ..EncoderConfig::default()
        };
        assert!(Encoder::new(&g, cfg, 0).is_err());
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let g = tiny(Matrix::filled(3, 4, 1.0), &[(0, 1), (1, 2)], true);
        let cfg = EncoderConfig {
            embed_dim: 2,
            ..EncoderConfig::default()
        };
        let mut enc = Encoder::new(&g, cfg, 1).unwrap();
        enc.set_param("enc.w1", Matrix::zeros(4, 2)).unwrap();
        let h = enc.forward(g.features().unwrap()).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_case() {
        let x = Matrix::from_rows(&[vec![0.3, 2.0]]).unwrap();
        let g = build_graph(&[], &[0], None, Some(x.clone()), true).unwrap();
        let cfg = EncoderConfig {
            embed_dim: 2,
            ..EncoderConfig::default()
        };
        let mut enc = Encoder::new(&g, cfg, 1).unwrap();
        enc.set_param("enc.w1", Matrix::identity(2)).unwrap();
        assert_eq!(enc.forward(&x).unwrap(), x);
    }

    #[test]
    fn theta_properties() {
        let g = tiny(Matrix::filled(3, 4, 1.0), &[(0, 1), (1, 2)], true);
        let cfg = EncoderConfig {
            embed_dim: 2,
            ..EncoderConfig::default()
        };
        let mut enc = Encoder::new(&g, cfg, 3).unwrap();
        // identity projection: w2 = I, w1 = I and inputs in the positive orthant
        enc.set_param("proj.w1", Matrix::identity(2)).unwrap();
        enc.set_param("proj.w2", Matrix::identity(2)).unwrap();
        assert!((enc.theta(&[0.4, 0.7], &[0.4, 0.7]).unwrap() - 1.0).abs() < 1e-12);
        assert!(enc.theta(&[1.0, 0.0], &[0.0, 2.0]).unwrap().abs() < 1e-15);
        let a = [0.9, -0.2];
        let b = [0.1, 0.5];
        assert_eq!(enc.theta(&a, &b).unwrap(), enc.theta(&b, &a).unwrap());
    }

    #[test]
    fn activation_parsing() {
        assert_eq!("PReLU".parse::<Activation>().unwrap(), Activation::Prelu);
        assert!("tanh".parse::<Activation>().is_err());
        assert!((RRELU_SLOPE - 11.0 / 48.0).abs() < 1e-16);
    }
}
