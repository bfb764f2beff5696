//! Extreme learning machine: a single-hidden-layer feedforward network with
//! a randomized, fixed hidden layer and minimum-norm least-squares training
//! of the linear output weights.
//!
//! The hidden weights and biases are drawn once from a seeded generator and
//! never tuned; training reduces to one linear least-squares solve per
//! output, handled by [`solve_output_weights`].

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};

/// Randomized hidden layer: `L` neurons, each computing `g(a_i · x + b_i)`.
///
/// Regenerating with the same seed reproduces the layer bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    input_dim: usize,
    /// `L x input_dim`; row `i` is the input weight vector of neuron `i`.
    weights: DMatrix<f64>,
    /// Length `L`.
    biases: DVector<f64>,
    activation: ActivationKind,
    seed: u64,
}

impl HiddenLayer {
    /// Draw a fresh hidden layer with weights and biases i.i.d. uniform on
    /// `[-1, 1]` from a deterministic generator seeded by `seed`.
    ///
    /// Draw order is fixed (weights row-major, then biases) so identical
    /// calls yield identical layers.
    pub fn new(
        input_dim: usize,
        num_neurons: usize,
        activation: ActivationKind,
        seed: u64,
    ) -> Self {
        assert!(input_dim >= 1, "input_dim must be positive");
        assert!(num_neurons >= 1, "num_neurons must be positive");
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut weights = DMatrix::zeros(num_neurons, input_dim);
        for r in 0..num_neurons {
            for c in 0..input_dim {
                weights[(r, c)] = rng.gen_range(-1.0..=1.0);
            }
        }
        let biases = DVector::from_fn(num_neurons, |_, _| rng.gen_range(-1.0..=1.0));
        Self {
            input_dim,
            weights,
            biases,
            activation,
            seed,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Number of hidden neurons `L`.
    pub fn num_neurons(&self) -> usize {
        self.weights.nrows()
    }

    pub fn activation(&self) -> ActivationKind {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn biases(&self) -> &DVector<f64> {
        &self.biases
    }

    /// The feature map `h(x)`: component `i` is `g(a_i · x + b_i)`.
    pub fn feature_map(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                what: "feature_map input",
                expected: self.input_dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature_map input"));
        }
        let mut z = &self.weights * x + &self.biases;
        z.apply(|v| *v = self.activation.apply(*v));
        Ok(z)
    }

    /// The hidden-layer output matrix `H`: entry `(i, j)` is `h_j(x_i)`.
    ///
    /// `inputs` holds one sample per row.
    pub fn hidden_matrix(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if inputs.nrows() == 0 {
            return Err(Error::EmptyInput("hidden_matrix inputs"));
        }
        if inputs.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                what: "hidden_matrix input columns",
                expected: self.input_dim,
                got: inputs.ncols(),
            });
        }
        let mut h = inputs * self.weights.transpose();
        for mut row in h.row_iter_mut() {
            row += self.biases.transpose();
        }
        h.apply(|v| *v = self.activation.apply(*v));
        Ok(h)
    }
}

/// Solve `min ||H beta - T||_F` for the minimum-Frobenius-norm `beta`.
///
/// Computed by singular value decomposition; singular values below
/// `max(N, L) * sigma_max * eps` are treated as zero. Returns the solution
/// and the residual `||H beta - T||_F`.
pub fn solve_output_weights(h: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    solve_output_weights_ridge(h, t, 0.0)
}

/// Ridge-regularized variant of [`solve_output_weights`].
///
/// With `lambda = 0` this is the plain minimum-norm solve; with
/// `lambda > 0` the singular-value filter becomes `s / (s^2 + lambda)`.
pub fn solve_output_weights_ridge(
    h: &DMatrix<f64>,
    t: &DMatrix<f64>,
    lambda: f64,
) -> Result<(DMatrix<f64>, f64)> {
    if h.nrows() != t.nrows() {
        return Err(Error::DimensionMismatch {
            what: "target rows",
            expected: h.nrows(),
            got: t.nrows(),
        });
    }
    if h.nrows() == 0 {
        return Err(Error::EmptyInput("least-squares system"));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("hidden matrix"));
    }
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("target matrix"));
    }
    let n_rows = h.nrows();
    let l = h.ncols();

    // For tall systems, reduce to an L x L triangular factor first; the
    // singular values and the minimum-norm solution are unchanged, the SVD
    // just runs on a much smaller matrix.
    let beta = if n_rows > 2 * l {
        let qr = h.clone().qr();
        let r = qr.r();
        let qt_t = qr.q().transpose() * t;
        svd_filter_solve(&r, &qt_t, n_rows, lambda)
    } else {
        svd_filter_solve(h, t, n_rows, lambda)
    };
    let residual = (h * &beta - t).norm();
    Ok((beta, residual))
}

/// Core SVD solve of `min ||A beta - rhs||` with the shared filter rule.
///
/// `n_rows` is the row count of the original (uncompressed) system and
/// enters the rank cutoff as `max(n_rows, ncols)`.
pub(crate) fn svd_filter_solve(
    a: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    n_rows: usize,
    lambda: f64,
) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd computed with u");
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
    let sigma = &svd.singular_values;
    let sigma_max = sigma.iter().cloned().fold(0.0_f64, f64::max);
    let tol = n_rows.max(a.ncols()) as f64 * sigma_max * f64::EPSILON;

    let mut ut_rhs = u.transpose() * rhs;
    for (i, mut row) in ut_rhs.row_iter_mut().enumerate() {
        let s = sigma[i];
        let f = if lambda > 0.0 {
            s / (s * s + lambda)
        } else if s > tol {
            1.0 / s
        } else {
            0.0
        };
        row *= f;
    }
    v_t.transpose() * ut_rhs
}

/// One subsystem's dynamics: a hidden layer plus solved output weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ElmModel {
    pub hidden: HiddenLayer,
    /// `L x output_dim` output weights.
    pub beta: DMatrix<f64>,
    pub output_dim: usize,
}

impl ElmModel {
    pub fn new(hidden: HiddenLayer, beta: DMatrix<f64>) -> Result<Self> {
        if beta.nrows() != hidden.num_neurons() {
            return Err(Error::DimensionMismatch {
                what: "beta rows",
                expected: hidden.num_neurons(),
                got: beta.nrows(),
            });
        }
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("beta"));
        }
        let output_dim = beta.ncols();
        Ok(Self {
            hidden,
            beta,
            output_dim,
        })
    }

    /// Predict the next state from the current state and input; for
    /// autonomous models pass an empty `u`.
    pub fn predict(&self, x: &[f64], u: &[f64]) -> Result<DVector<f64>> {
        let mut xu = Vec::with_capacity(x.len() + u.len());
        xu.extend_from_slice(x);
        xu.extend_from_slice(u);
        self.predict_concat(&DVector::from_vec(xu))
    }

    /// Predict from an already concatenated `(x, u)` vector.
    pub fn predict_concat(&self, xu: &DVector<f64>) -> Result<DVector<f64>> {
        let h = self.hidden.feature_map(xu)?;
        Ok(self.beta.transpose() * h)
    }
}

/// Wire format for [`ElmModel`] JSON documents.
#[derive(Serialize, Deserialize)]
struct ElmModelRepr {
    activation: ActivationKind,
    input_dim: usize,
    output_dim: usize,
    #[serde(rename = "L")]
    num_neurons: usize,
    seed: u64,
    /// Row-major `L x input_dim`.
    weights: Vec<f64>,
    biases: Vec<f64>,
    /// Row-major `L x output_dim`.
    beta: Vec<f64>,
}

impl Serialize for ElmModel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let l = self.hidden.num_neurons();
        let d = self.hidden.input_dim();
        let repr = ElmModelRepr {
            activation: self.hidden.activation(),
            input_dim: d,
            output_dim: self.output_dim,
            num_neurons: l,
            seed: self.hidden.seed(),
            weights: (0..l)
                .flat_map(|r| (0..d).map(move |c| (r, c)))
                .map(|(r, c)| self.hidden.weights()[(r, c)])
                .collect(),
            biases: self.hidden.biases().iter().cloned().collect(),
            beta: (0..l)
                .flat_map(|r| (0..self.output_dim).map(move |c| (r, c)))
                .map(|(r, c)| self.beta[(r, c)])
                .collect(),
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ElmModel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = ElmModelRepr::deserialize(deserializer)?;
        let l = repr.num_neurons;
        if repr.weights.len() != l * repr.input_dim {
            return Err(D::Error::custom("weights length does not match L x input_dim"));
        }
        if repr.biases.len() != l {
            return Err(D::Error::custom("biases length does not match L"));
        }
        if repr.beta.len() != l * repr.output_dim {
            return Err(D::Error::custom("beta length does not match L x output_dim"));
        }
        let hidden = HiddenLayer {
            input_dim: repr.input_dim,
            weights: DMatrix::from_row_slice(l, repr.input_dim, &repr.weights),
            biases: DVector::from_vec(repr.biases),
            activation: repr.activation,
            seed: repr.seed,
        };
        let beta = DMatrix::from_row_slice(l, repr.output_dim, &repr.beta);
        Ok(ElmModel {
            hidden,
            beta,
            output_dim: repr.output_dim,
        })
    }
}
