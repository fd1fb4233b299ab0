use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NetError;

/// Lower and upper bound of the scaled range seen by the sigmoid units.
pub const SCALED_LOW: f64 = 0.1;
pub const SCALED_HIGH: f64 = 0.9;
pub const SCALED_SPAN: f64 = SCALED_HIGH - SCALED_LOW;
/// Any parameter beyond this magnitude counts as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Seeded generator used for weight initialization and perturbation
/// (ChaCha with 8 rounds, seeded from a `u64`).
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Affine map from a raw interval onto `[0.1, 0.9]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl Scaling {
    pub fn new(name: impl Into<String>, min: f64, max: f64) -> Result<Self, NetError> {
        let name = name.into();
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(NetError::Scaling {
                name,
                reason: format!("requires min < max, got [{min}, {max}]"),
            });
        }
        Ok(Self { name, min, max })
    }

    pub fn scale(&self, raw: f64) -> f64 {
        SCALED_LOW + SCALED_SPAN * (raw - self.min) / (self.max - self.min)
    }

    pub fn descale(&self, scaled: f64) -> f64 {
        self.min + (scaled - SCALED_LOW) / SCALED_SPAN * (self.max - self.min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Tolerance as a fraction of the scaled output span.
    pub error_margin: f64,
    pub initial_weight_range: f64,
    pub max_epochs: usize,
    pub convergence_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.3,
            error_margin: 0.05,
            initial_weight_range: 0.4,
            max_epochs: 10_000,
            convergence_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let problem = if !(self.learning_rate > 0.0) {
            Some("learning_rate must be positive")
        } else if !(self.error_margin > 0.0 && self.error_margin < 1.0) {
            Some("error_margin must lie in (0, 1)")
        } else if !(self.initial_weight_range > 0.0) {
            Some("initial_weight_range must be positive")
        } else if self.max_epochs == 0 {
            Some("max_epochs must be at least 1")
        } else if !(self.convergence_fraction > 0.0 && self.convergence_fraction <= 1.0) {
            Some("convergence_fraction must lie in (0, 1]")
        } else {
            None
        };
        match problem {
            Some(p) => Err(NetError::Input(p.into())),
            None => Ok(()),
        }
    }

    /// Absolute error allowed in scaled units.
    pub fn tolerance(&self) -> f64 {
        self.error_margin * SCALED_SPAN
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub fraction_within_tolerance: f64,
}

/// Gradient of `½(o - t)²` with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl Gradients {
    /// Same ordering as [`MlpExpert::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.w1.len() + 2 * self.b1.len() + 1);
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.push(self.b2);
        out
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One trained (or trainable) single-hidden-layer network.
///
/// `w1` is stored row-major as `n_hidden` rows of `n_inputs` weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpExpert {
    pub(crate) n_inputs: usize,
    pub(crate) n_hidden: usize,
    pub(crate) w1: Vec<f64>,
    pub(crate) b1: Vec<f64>,
    pub(crate) w2: Vec<f64>,
    pub(crate) b2: f64,
    pub(crate) input_scaling: Vec<Scaling>,
    pub(crate) output_scaling: Option<Scaling>,
    pub(crate) seed: u64,
    pub(crate) history: Vec<EpochStat>,
}

impl MlpExpert {
    /// Draws every weight and bias uniformly from `[-range, range]`.
    pub fn init(n_inputs: usize, n_hidden: usize, range: f64, seed: u64) -> Result<Self, NetError> {
        if n_inputs == 0 || n_hidden == 0 {
            return Err(NetError::Input(format!(
                "topology ({n_inputs}, {n_hidden}, 1) needs at least one input and one hidden unit"
            )));
        }
        if !(range > 0.0 && range.is_finite()) {
            return Err(NetError::Input(format!("initial weight range {range} must be positive")));
        }
        let mut rng = seeded_rng(seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-range..=range)).collect() };
        let w1 = draw(n_inputs * n_hidden);
        let b1 = draw(n_hidden);
        let w2 = draw(n_hidden);
        let b2 = draw(1)[0];
        Ok(Self {
            n_inputs,
            n_hidden,
            w1,
            b1,
            w2,
            b2,
            input_scaling: Vec::new(),
            output_scaling: None,
            seed,
            history: Vec::new(),
        })
    }

    /// Builds an expert from explicit parameters, checking dimensions.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        n_inputs: usize,
        n_hidden: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: f64,
        seed: u64,
    ) -> Result<Self, NetError> {
        if n_inputs == 0 || n_hidden == 0 {
            return Err(NetError::Input("empty topology".into()));
        }
        if w1.len() != n_inputs * n_hidden || b1.len() != n_hidden || w2.len() != n_hidden {
            return Err(NetError::Input(format!(
                "parameter sizes ({}, {}, {}) do not match topology ({n_inputs}, {n_hidden}, 1)",
                w1.len(),
                b1.len(),
                w2.len()
            )));
        }
        let expert = Self {
            n_inputs,
            n_hidden,
            w1,
            b1,
            w2,
            b2,
            input_scaling: Vec::new(),
            output_scaling: None,
            seed,
            history: Vec::new(),
        };
        if !expert.parameters_finite() {
            return Err(NetError::Input("non-finite parameter".into()));
        }
        Ok(expert)
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn history(&self) -> &[EpochStat] {
        &self.history
    }

    pub fn input_scaling(&self) -> &[Scaling] {
        &self.input_scaling
    }

    pub fn output_scaling(&self) -> Option<&Scaling> {
        self.output_scaling.as_ref()
    }

    pub fn is_scaled(&self) -> bool {
        self.output_scaling.is_some() && self.input_scaling.len() == self.n_inputs
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// All parameters flattened as `w1, b1, w2, b2`.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.push(self.b2);
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<(), NetError> {
        if params.len() != self.parameter_count() {
            return Err(NetError::Input(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                params.len()
            )));
        }
        let (w1, rest) = params.split_at(self.w1.len());
        let (b1, rest) = rest.split_at(self.b1.len());
        let (w2, rest) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.copy_from_slice(w2);
        self.b2 = rest[0];
        Ok(())
    }

    fn parameters_finite(&self) -> bool {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(std::iter::once(&self.b2))
            .all(|v| v.is_finite() && v.abs() <= DIVERGENCE_LIMIT)
    }

    /// Fits per-feature and target min/max on the given (training) rows.
    pub fn fit_scaling(
        &mut self,
        names: &[String],
        target_name: &str,
        inputs: &[Vec<f64>],
        targets: &[f64],
    ) -> Result<(), NetError> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(NetError::Input(format!(
                "scaling needs matching non-empty rows, got {} inputs and {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if names.len() != self.n_inputs {
            return Err(NetError::Input(format!(
                "{} feature names for {} inputs",
                names.len(),
                self.n_inputs
            )));
        }
        self.check_rows(inputs)?;
        let bounds = |values: &mut dyn Iterator<Item = f64>| {
            values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let mut scaling = Vec::with_capacity(self.n_inputs);
        for (j, name) in names.iter().enumerate() {
            let (lo, hi) = bounds(&mut inputs.iter().map(|row| row[j]));
            scaling.push(Scaling::new(name.clone(), lo, hi)?);
        }
        let (lo, hi) = bounds(&mut targets.iter().copied());
        self.output_scaling = Some(Scaling::new(target_name, lo, hi)?);
        self.input_scaling = scaling;
        Ok(())
    }

    fn check_rows(&self, inputs: &[Vec<f64>]) -> Result<(), NetError> {
        match inputs.iter().position(|r| r.len() != self.n_inputs) {
            Some(i) => Err(NetError::Input(format!(
                "row {i} has {} features, network expects {}",
                inputs[i].len(),
                self.n_inputs
            ))),
            None => Ok(()),
        }
    }

    fn scalings(&self) -> Result<(&[Scaling], &Scaling), NetError> {
        match &self.output_scaling {
            Some(out) if self.input_scaling.len() == self.n_inputs => Ok((&self.input_scaling, out)),
            _ => Err(NetError::State("expert has no fitted scaling".into())),
        }
    }

    pub fn scale_inputs(&self, x: &[f64]) -> Result<Vec<f64>, NetError> {
        let (inputs, _) = self.scalings()?;
        if x.len() != self.n_inputs {
            return Err(NetError::Input(format!(
                "row has {} features, network expects {}",
                x.len(),
                self.n_inputs
            )));
        }
        Ok(x.iter().zip(inputs).map(|(v, s)| s.scale(*v)).collect())
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        self.w1
            .chunks_exact(self.n_inputs)
            .zip(&self.b1)
            .map(|(row, b)| sigmoid(row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b))
            .collect()
    }

    /// Network output in scaled space for an already-scaled input row.
    pub fn forward_scaled(&self, x: &[f64]) -> f64 {
        let h = self.hidden(x);
        sigmoid(self.w2.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>() + self.b2)
    }

    /// Prediction in raw target units.
    pub fn forward(&self, x: &[f64]) -> Result<f64, NetError> {
        let scaled = self.scale_inputs(x)?;
        let (_, out) = self.scalings()?;
        Ok(out.descale(self.forward_scaled(&scaled)))
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, NetError> {
        rows.iter().map(|r| self.forward(r)).collect()
    }

    /// Loss `½(o - t)²` and its analytic gradient for one scaled example.
    pub fn loss_and_gradient(&self, x: &[f64], target: f64) -> (f64, Gradients) {
        let h = self.hidden(x);
        let o = sigmoid(self.w2.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>() + self.b2);
        let err = o - target;
        let delta_out = err * o * (1.0 - o);
        let delta_hidden: Vec<f64> = h
            .iter()
            .zip(&self.w2)
            .map(|(hj, w)| delta_out * w * hj * (1.0 - hj))
            .collect();
        let mut w1 = Vec::with_capacity(self.w1.len());
        for d in &delta_hidden {
            w1.extend(x.iter().map(|xi| d * xi));
        }
        let grads = Gradients {
            w1,
            b1: delta_hidden,
            w2: h.iter().map(|hj| delta_out * hj).collect(),
            b2: delta_out,
        };
        (0.5 * err * err, grads)
    }

    fn apply(&mut self, g: &Gradients, lr: f64) {
        let step = |p: &mut [f64], g: &[f64]| p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
        step(&mut self.w1, &g.w1);
        step(&mut self.b1, &g.b1);
        step(&mut self.w2, &g.w2);
        self.b2 -= lr * g.b2;
    }

    /// Online backpropagation over the rows in order, one update per row.
    ///
    /// After each epoch the fraction of rows whose scaled error is within
    /// tolerance is recorded; training stops once it reaches
    /// `convergence_fraction` or after `max_epochs`.
    pub fn train(&mut self, inputs: &[Vec<f64>], targets: &[f64], cfg: &TrainConfig) -> Result<(), NetError> {
        cfg.validate()?;
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(NetError::Input(format!(
                "training needs matching non-empty rows, got {} inputs and {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        self.check_rows(inputs)?;
        let (in_scale, out_scale) = self.scalings()?;
        let xs: Vec<Vec<f64>> = inputs
            .iter()
            .map(|r| r.iter().zip(in_scale).map(|(v, s)| s.scale(*v)).collect())
            .collect();
        let ts: Vec<f64> = targets.iter().map(|&t| out_scale.scale(t)).collect();
        let tol = cfg.tolerance();
        let start = self.history.last().map_or(0, |s| s.epoch);
        for epoch in start + 1..=start + cfg.max_epochs {
            for (x, &t) in xs.iter().zip(&ts) {
                let (_, g) = self.loss_and_gradient(x, t);
                self.apply(&g, cfg.learning_rate);
            }
            if !self.parameters_finite() {
                return Err(NetError::Diverged { epoch });
            }
            let within = xs
                .iter()
                .zip(&ts)
                .filter(|(x, &t)| (self.forward_scaled(x) - t).abs() <= tol)
                .count();
            let fraction = within as f64 / xs.len() as f64;
            self.history.push(EpochStat {
                epoch,
                fraction_within_tolerance: fraction,
            });
            if fraction >= cfg.convergence_fraction {
                break;
            }
        }
        Ok(())
    }

    pub fn converged_fraction(&self) -> f64 {
        self.history.last().map_or(0.0, |s| s.fraction_within_tolerance)
    }

    /// Returns a copy with every parameter shifted by uniform noise in
    /// `[-epsilon, epsilon]`.
    pub fn perturbed(&self, epsilon: f64, rng: &mut impl Rng) -> Self {
        let mut out = self.clone();
        let params: Vec<f64> = self
            .parameters()
            .into_iter()
            .map(|p| p + rng.random_range(-epsilon..=epsilon))
            .collect();
        out.set_parameters(&params).expect("same parameter count");
        out
    }
}
