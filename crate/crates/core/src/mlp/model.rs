//! Fully connected network: ReLU hidden layers, softmax output, cross-entropy
//! loss. A plaintext twin of every step is kept for checking the secure one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::softmax_plain;
use crate::error::{Error, Result};
use crate::protocols::{hadamard, matmul, relu, reshare, softmax};
use crate::runtime::{Session, DEFAULT_SOFTMAX_HALF_WIDTH};
use crate::sharing::{share, AdditiveShare, PartyId};
use crate::tensor::{Matrix, RandomRange};

/// How the summed per-sample gradient is scaled before the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientScale {
    /// `W -= lr * AᵀG`.
    Sum,
    /// `W -= (lr / batch) * AᵀG`.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Input width, hidden widths, class count.
    pub layer_sizes: Vec<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub gradient_scale: GradientScale,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    pub split_seed: u64,
    pub train_size: usize,
    /// Range the output logits are reshared into before softmax.
    pub softmax_reshare_range: RandomRange,
}

impl MlpConfig {
    fn small_tabular(inputs: usize, train_size: usize) -> Self {
        Self {
            layer_sizes: vec![inputs, 16, 16, 3],
            batch_size: 16,
            learning_rate: 0.05,
            epochs: 5,
            gradient_scale: GradientScale::Sum,
            init_seed: 0,
            shuffle_seed: 0,
            split_seed: 0,
            train_size,
            softmax_reshare_range: RandomRange::symmetric(DEFAULT_SOFTMAX_HALF_WIDTH)
                .expect("valid"),
        }
    }

    /// 4-16-16-3, 120 training rows.
    pub fn iris() -> Self {
        Self::small_tabular(4, 120)
    }

    /// 13-16-16-3, 142 training rows.
    pub fn wine() -> Self {
        Self::small_tabular(13, 142)
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "iris" => Ok(Self::iris()),
            "wine" => Ok(Self::wine()),
            other => Err(Error::Config(format!("no preset for dataset {other:?}"))),
        }
    }

    /// Derives all three seeds from one.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self.shuffle_seed = seed.wrapping_add(0x5eed_0001);
        self.split_seed = seed.wrapping_add(0x5eed_0002);
        self
    }

    pub fn layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn classes(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "layer sizes {:?} need at least input and output, all positive",
                self.layer_sizes
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.train_size == 0 {
            return Err(Error::Config(
                "batch size, epochs and train size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        self.softmax_reshare_range.validate()
    }

    /// Multiplier applied to the summed batch gradient.
    pub fn step_factor(&self, batch_rows: usize) -> f64 {
        match self.gradient_scale {
            GradientScale::Sum => self.learning_rate,
            GradientScale::Mean => self.learning_rate / batch_rows as f64,
        }
    }

    pub fn weight_shapes(&self) -> Vec<(usize, usize)> {
        self.layer_sizes.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Parameters in the clear.
#[derive(Debug, Clone, PartialEq)]
pub struct PlainModel {
    pub weights: Vec<Matrix>,
    /// `1 x out` rows.
    pub biases: Vec<Matrix>,
}

/// What a plaintext forward pass keeps for backprop.
#[derive(Debug, Clone, PartialEq)]
pub struct PlainForward {
    /// Input to each layer; `inputs[0]` is the batch.
    pub inputs: Vec<Matrix>,
    /// ReLU derivative of each hidden layer.
    pub derivs: Vec<Matrix>,
    pub output: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlainGradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Matrix>,
}

impl PlainModel {
    /// Uniform in `±sqrt(6 / fan_in)`, zero biases.
    pub fn init(config: &MlpConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (fan_in, fan_out) in config.weight_shapes() {
            let limit = (6.0 / fan_in as f64).sqrt();
            weights.push(Matrix::from_fn(fan_in, fan_out, |_, _| {
                rng.gen_range(-limit..limit)
            }));
            biases.push(Matrix::zeros(1, fan_out));
        }
        Ok(Self { weights, biases })
    }

    pub fn zeros(config: &MlpConfig) -> Self {
        let shapes = config.weight_shapes();
        Self {
            weights: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            biases: shapes.iter().map(|&(_, c)| Matrix::zeros(1, c)).collect(),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<PlainForward> {
        let last = self.weights.len() - 1;
        let mut inputs = vec![x.clone()];
        let mut derivs = Vec::new();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = inputs[l].matmul(w)?.add_row_broadcast(b)?;
            if l == last {
                return Ok(PlainForward {
                    inputs,
                    derivs,
                    output: softmax_plain(&z),
                });
            }
            let d = z.map(|v| if v >= 0.0 { 1.0 } else { 0.0 });
            inputs.push(z.hadamard(&d)?);
            derivs.push(d);
        }
        unreachable!("at least one layer")
    }

    pub fn gradients(&self, fwd: &PlainForward, y: &Matrix) -> Result<PlainGradients> {
        let layers = self.weights.len();
        let mut g = fwd.output.sub(y)?;
        let mut dw = vec![Matrix::zeros(1, 1); layers];
        let mut db = vec![Matrix::zeros(1, 1); layers];
        for l in (0..layers).rev() {
            dw[l] = fwd.inputs[l].transpose().matmul(&g)?;
            db[l] = g.colsum();
            if l > 0 {
                g = g
                    .matmul(&self.weights[l].transpose())?
                    .hadamard(&fwd.derivs[l - 1])?;
            }
        }
        Ok(PlainGradients {
            weights: dw,
            biases: db,
        })
    }

    pub fn step(&mut self, grads: &PlainGradients, factor: f64) -> Result<()> {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            *w = w.sub(&g.scale(factor))?;
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            *b = b.sub(&g.scale(factor))?;
        }
        Ok(())
    }

    /// One SGD step on a batch; returns the batch loss.
    pub fn train_batch(&mut self, config: &MlpConfig, x: &Matrix, y: &Matrix) -> Result<f64> {
        let fwd = self.forward(x)?;
        let loss = cross_entropy(&fwd.output, y)?;
        let grads = self.gradients(&fwd, y)?;
        self.step(&grads, config.step_factor(x.rows()))?;
        Ok(loss)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self.forward(x)?.output.argmax_rows())
    }
}

/// Mean of `-ln(p_label)` over rows; probabilities are floored at `1e-12`.
pub fn cross_entropy(probs: &Matrix, one_hot: &Matrix) -> Result<f64> {
    let picked = probs.hadamard(one_hot)?;
    let per_row: Vec<f64> = (0..picked.rows())
        .map(|r| picked.row(r).iter().sum())
        .collect();
    Ok(mean_neg_log(&per_row))
}

pub(crate) fn mean_neg_log(p: &[f64]) -> f64 {
    p.iter().map(|v| -v.max(1e-12).ln()).sum::<f64>() / p.len() as f64
}

/// Parameters as sharings.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedModel {
    pub weights: Vec<AdditiveShare>,
    pub biases: Vec<AdditiveShare>,
}

/// What a secure forward pass keeps for backprop.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub inputs: Vec<AdditiveShare>,
    pub derivs: Vec<AdditiveShare>,
    pub output: AdditiveShare,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<AdditiveShare>,
    pub biases: Vec<AdditiveShare>,
}

impl SharedModel {
    /// `dealer` shares `plain`; the others pass `None`.
    pub fn share(
        sess: &mut Session,
        dealer: PartyId,
        plain: Option<&PlainModel>,
        config: &MlpConfig,
    ) -> Result<Self> {
        if (sess.id() == dealer) != plain.is_some() {
            return Err(Error::Config(format!(
                "exactly {dealer} supplies the initial model"
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, (r, c)) in config.weight_shapes().into_iter().enumerate() {
            let w = plain.map(|p| &p.weights[l]);
            let b = plain.map(|p| &p.biases[l]);
            if let (Some(w), Some(b)) = (w, b) {
                if w.shape() != (r, c) || b.shape() != (1, c) {
                    return Err(Error::Dimension {
                        op: "model layer",
                        left: w.shape(),
                        right: (r, c),
                    });
                }
            }
            weights.push(share(sess, dealer, w, (r, c))?);
            biases.push(share(sess, dealer, b, (1, c))?);
        }
        Ok(Self { weights, biases })
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn step(&mut self, grads: &Gradients, factor: f64) -> Result<()> {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            *w = w.sub(&g.scale(factor))?;
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            *b = b.sub(&g.scale(factor))?;
        }
        Ok(())
    }
}

/// Brings the parts of a product back into the session mask range. Parts
/// of a product grow with the operands' parts, so chained layers would
/// otherwise lose absolute precision geometrically.
fn refresh(sess: &mut Session, a: &AdditiveShare) -> Result<AdditiveShare> {
    let range = sess.config().randomness;
    reshare(sess, a, &range)
}

/// Secure forward pass. Hidden pre-activations and ReLU outputs are
/// reshared into the session range; the output logits go into
/// `config.softmax_reshare_range` so softmax can exponentiate their parts.
pub fn forward(
    sess: &mut Session,
    model: &SharedModel,
    x: &AdditiveShare,
    config: &MlpConfig,
) -> Result<Forward> {
    let last = model.layers() - 1;
    let mut inputs = vec![x.clone()];
    let mut derivs = Vec::new();
    for l in 0..model.layers() {
        let z = matmul(sess, &inputs[l], &model.weights[l])
            .and_then(|z| z.add_row_broadcast(&model.biases[l]))
            .map_err(|e| e.context(format!("layer {l}")))?;
        if l == last {
            let narrow = reshare(sess, &z, &config.softmax_reshare_range)?;
            let output =
                softmax(sess, &narrow).map_err(|e| e.context(format!("output layer {l}")))?;
            return Ok(Forward {
                inputs,
                derivs,
                output,
            });
        }
        let z = refresh(sess, &z)?;
        let r = relu(sess, &z).map_err(|e| e.context(format!("layer {l}")))?;
        inputs.push(refresh(sess, &r.value)?);
        derivs.push(refresh(sess, &r.deriv)?);
    }
    unreachable!("at least one layer")
}

/// Cross-entropy gradients starting from `Ŷ - Y`.
pub fn gradients(
    sess: &mut Session,
    model: &SharedModel,
    fwd: &Forward,
    y: &AdditiveShare,
) -> Result<Gradients> {
    let layers = model.layers();
    let mut g = refresh(sess, &fwd.output.sub(y)?)?;
    let mut dw = Vec::with_capacity(layers);
    let mut db = Vec::with_capacity(layers);
    for l in (0..layers).rev() {
        dw.push(matmul(sess, &fwd.inputs[l].transpose(), &g)?);
        db.push(g.colsum());
        if l > 0 {
            let back = matmul(sess, &g, &model.weights[l].transpose())?;
            let back = refresh(sess, &back)?;
            let masked = hadamard(sess, &back, &fwd.derivs[l - 1])?;
            g = refresh(sess, &masked)?;
        }
    }
    dw.reverse();
    db.reverse();
    Ok(Gradients {
        weights: dw,
        biases: db,
    })
}

/// Gradients of the batch loss followed by one SGD update. The updated
/// parameters are reshared.
pub fn backward_and_step(
    sess: &mut Session,
    model: &mut SharedModel,
    fwd: &Forward,
    y: &AdditiveShare,
    config: &MlpConfig,
) -> Result<()> {
    let grads = gradients(sess, model, fwd, y)?;
    model.step(&grads, config.step_factor(y.rows()))?;
    for p in model.weights.iter_mut().chain(model.biases.iter_mut()) {
        *p = refresh(sess, p)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::testutil::{open, run};
    use crate::sharing::share_from;

    fn toy_config() -> MlpConfig {
        let mut c = MlpConfig::iris().with_seed(3);
        c.layer_sizes = vec![4, 8, 3];
        c
    }

    fn toy_batch() -> (Matrix, Matrix) {
        let x = Matrix::from_fn(6, 4, |i, j| ((i * 4 + j) as f64 * 0.77).sin());
        let y = crate::mlp::data::one_hot(&[0, 1, 2, 2, 1, 0], 3).unwrap();
        (x, y)
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let c = MlpConfig::iris().with_seed(1);
        let a = PlainModel::init(&c).unwrap();
        assert_eq!(a, PlainModel::init(&c).unwrap());
        assert_ne!(a, PlainModel::init(&c.clone().with_seed(2)).unwrap());
        let shapes: Vec<_> = a.weights.iter().map(Matrix::shape).collect();
        assert_eq!(shapes, vec![(4, 16), (16, 16), (16, 3)]);
        assert!(a.weights[0].max_abs() <= (6.0f64 / 4.0).sqrt());
        assert!(a.biases.iter().all(|b| b.max_abs() == 0.0));
    }

    #[test]
    fn zero_model_predicts_uniform() {
        let c = MlpConfig::iris();
        let x = Matrix::from_fn(5, 4, |i, j| i as f64 - j as f64);
        let out = run(|s| {
            let plain = PlainModel::zeros(&c);
            let m = SharedModel::share(
                s,
                PartyId::P0,
                (s.id() == PartyId::P0).then_some(&plain),
                &c,
            )?;
            let xs = share_from(s, PartyId::P1, &x)?;
            let f = forward(s, &m, &xs, &c)?;
            open(s, &f.output)
        });
        for v in out.outputs()[0].as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-9, "{v}");
        }
        // opened scores carry noise, so the tie rule is checked on exact rows
        assert_eq!(Matrix::filled(5, 3, 1.0 / 3.0).argmax_rows(), vec![0; 5]);
    }

    #[test]
    fn secure_step_tracks_plaintext_step() {
        let c = toy_config();
        let (x, y) = toy_batch();
        let plain = PlainModel::init(&c).unwrap();
        let out = run(|s| {
            let mut m = SharedModel::share(
                s,
                PartyId::P0,
                (s.id() == PartyId::P0).then_some(&plain),
                &c,
            )?;
            let xs = share_from(s, PartyId::P1, &x)?;
            let ys = share_from(s, PartyId::P2, &y)?;
            let f = forward(s, &m, &xs, &c)?;
            let yhat = open(s, &f.output)?;
            backward_and_step(s, &mut m, &f, &ys, &c)?;
            let w: Result<Vec<Matrix>> = m.weights.iter().map(|w| open(s, w)).collect();
            Ok((yhat, w?))
        });
        let (yhat, w) = out.outputs()[0];
        let mut mirror = plain.clone();
        let pf = mirror.forward(&x).unwrap();
        for (g, e) in yhat.as_slice().iter().zip(pf.output.as_slice()) {
            assert!((g - e).abs() <= 1e-6 * e.abs(), "{g} vs {e}");
        }
        mirror.train_batch(&c, &x, &y).unwrap();
        for (gw, ew) in w.iter().zip(&mirror.weights) {
            for (g, e) in gw.as_slice().iter().zip(ew.as_slice()) {
                assert!((g - e).abs() <= 1e-6 * e.abs().max(1e-3), "{g} vs {e}");
            }
        }
    }

    #[test]
    fn exact_targets_give_zero_gradient() {
        let c = toy_config();
        let plain = PlainModel::init(&c).unwrap();
        let (x, _) = toy_batch();
        let fwd = plain.forward(&x).unwrap();
        let g = plain.gradients(&fwd, &fwd.output).unwrap();
        assert!(g
            .weights
            .iter()
            .chain(&g.biases)
            .all(|m| m.max_abs() == 0.0));
    }

    #[test]
    fn plain_gradient_matches_finite_differences() {
        let c = toy_config();
        let plain = PlainModel::init(&c).unwrap();
        let (x, y) = toy_batch();
        let g = plain.gradients(&plain.forward(&x).unwrap(), &y).unwrap();
        let h = 1e-5;
        // summed loss, matching the unscaled gradient
        let loss = |m: &PlainModel| {
            cross_entropy(&m.forward(&x).unwrap().output, &y).unwrap() * x.rows() as f64
        };
        for (i, j) in [(0, 0), (2, 5), (3, 7)] {
            let mut up = plain.clone();
            let mut down = plain.clone();
            up.weights[0].set(i, j, plain.weights[0].get(i, j) + h);
            down.weights[0].set(i, j, plain.weights[0].get(i, j) - h);
            let fd = (loss(&up) - loss(&down)) / (2.0 * h);
            assert!(
                (fd - g.weights[0].get(i, j)).abs() < 1e-6,
                "{fd} vs {}",
                g.weights[0].get(i, j)
            );
        }
    }

    #[test]
    fn config_validation() {
        let mut c = MlpConfig::wine();
        assert_eq!(c.layer_sizes, vec![13, 16, 16, 3]);
        c.layer_sizes = vec![4];
        assert!(c.validate().is_err());
        assert!(MlpConfig::preset("mnist").is_err());
        let c = MlpConfig::iris();
        assert_eq!(c.step_factor(16), 0.05);
        let m = MlpConfig {
            gradient_scale: GradientScale::Mean,
            ..MlpConfig::iris()
        };
        assert_eq!(m.step_factor(10), 0.005);
    }
}
