//! Stacked LSTM with a scalar linear head, forward pass and exact BPTT.
//!
//! All parameters live in one flat vector. Per layer the layout is
//! `W (4H × D) | U (4H × H) | b (4H)`, row-major, gate blocks ordered
//! input, forget, cell, output. The head `w (H) | b (1)` comes last.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    input_width: usize,
    hidden: usize,
    layers: usize,
    params: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerSlices {
    pub w: usize,
    pub u: usize,
    pub b: usize,
    pub input: usize,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out += M · x` for a row-major `rows × x.len()` block of `params`.
fn matvec_add(params: &[f64], offset: usize, rows: usize, x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        let row = &params[offset + r * cols..offset + (r + 1) * cols];
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Mᵀ · d` for a row-major `d.len() × out.len()` block.
fn matvec_t_add(params: &[f64], offset: usize, d: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (r, dr) in d.iter().enumerate() {
        if *dr == 0.0 {
            continue;
        }
        let row = &params[offset + r * cols..offset + (r + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * dr;
        }
    }
}

/// `G += d ⊗ x` into a row-major block of the gradient vector.
fn outer_add(grad: &mut [f64], offset: usize, d: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, dr) in d.iter().enumerate() {
        if *dr == 0.0 {
            continue;
        }
        let row = &mut grad[offset + r * cols..offset + (r + 1) * cols];
        for (g, xv) in row.iter_mut().zip(x) {
            *g += dr * xv;
        }
    }
}

/// Activations kept from the forward pass for one layer and time step.
#[derive(Clone, Debug)]
struct StepCache {
    /// Post-activation gates `[i | f | g | o]`.
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

pub(crate) struct ForwardTrace {
    /// `steps[layer][t]`.
    steps: Vec<Vec<StepCache>>,
    pub outputs: Vec<f64>,
}

impl LstmModel {
    pub fn parameter_count(input_width: usize, hidden: usize, layers: usize) -> usize {
        let mut n = 0;
        for l in 0..layers {
            let d = if l == 0 { input_width } else { hidden };
            n += 4 * hidden * (d + hidden + 1);
        }
        n + hidden + 1
    }

    pub fn zeros(input_width: usize, hidden: usize, layers: usize) -> Self {
        assert!(input_width > 0 && hidden > 0 && layers > 0);
        Self {
            input_width,
            hidden,
            layers,
            params: vec![0.0; Self::parameter_count(input_width, hidden, layers)],
        }
    }

    /// Uniform `±1/√H` initialization with forget-gate biases set to 1.
    pub fn init(input_width: usize, hidden: usize, layers: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut model = Self::zeros(input_width, hidden, layers);
        let k = 1.0 / (hidden as f64).sqrt();
        for p in model.params.iter_mut() {
            *p = rng.random_range(-k..k);
        }
        for l in 0..layers {
            let s = model.layer(l);
            for j in 0..hidden {
                model.params[s.b + hidden + j] = 1.0;
            }
        }
        let hb = model.head_bias_index();
        model.params[hb] = 0.0;
        model
    }

    pub fn from_parts(input_width: usize, hidden: usize, layers: usize, params: Vec<f64>) -> Result<Self> {
        if input_width == 0 || hidden == 0 || layers == 0 {
            return Err(Error::ShapeMismatch("model dimensions must be positive".into()));
        }
        let expected = Self::parameter_count(input_width, hidden, layers);
        if params.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters, expected {expected}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite parameter".into()));
        }
        Ok(Self {
            input_width,
            hidden,
            layers,
            params,
        })
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub(crate) fn layer(&self, l: usize) -> LayerSlices {
        let h = self.hidden;
        let mut offset = 0;
        for k in 0..l {
            let d = if k == 0 { self.input_width } else { h };
            offset += 4 * h * (d + h + 1);
        }
        let input = if l == 0 { self.input_width } else { h };
        LayerSlices {
            w: offset,
            u: offset + 4 * h * input,
            b: offset + 4 * h * (input + h),
            input,
        }
    }

    pub(crate) fn head_weight_index(&self) -> usize {
        self.params.len() - self.hidden - 1
    }

    pub(crate) fn head_bias_index(&self) -> usize {
        self.params.len() - 1
    }

    pub fn set_head_bias(&mut self, value: f64) {
        let i = self.head_bias_index();
        self.params[i] = value;
    }

    fn check(&self, fm: &FeatureMatrix) -> Result<()> {
        if fm.width() != self.input_width {
            return Err(Error::ShapeMismatch(format!(
                "feature width {} does not match model input width {}",
                fm.width(),
                self.input_width
            )));
        }
        Ok(())
    }

    pub(crate) fn trace(&self, fm: &FeatureMatrix) -> Result<ForwardTrace> {
        self.check(fm)?;
        let h = self.hidden;
        let t_len = fm.rows();
        let mut steps: Vec<Vec<StepCache>> = Vec::with_capacity(self.layers);
        for l in 0..self.layers {
            let s = self.layer(l);
            let mut layer_steps: Vec<StepCache> = Vec::with_capacity(t_len);
            let zeros = vec![0.0; h];
            for t in 0..t_len {
                let x: &[f64] = if l == 0 { fm.row(t) } else { &steps[l - 1][t].h };
                let (h_prev, c_prev) = match layer_steps.last() {
                    Some(p) => (&p.h[..], &p.c[..]),
                    None => (&zeros[..], &zeros[..]),
                };
                let mut z = self.params[s.b..s.b + 4 * h].to_vec();
                matvec_add(&self.params, s.w, 4 * h, x, &mut z);
                matvec_add(&self.params, s.u, 4 * h, h_prev, &mut z);
                let mut gates = z;
                for j in 0..h {
                    gates[j] = sigmoid(gates[j]);
                    gates[h + j] = sigmoid(gates[h + j]);
                    gates[2 * h + j] = gates[2 * h + j].tanh();
                    gates[3 * h + j] = sigmoid(gates[3 * h + j]);
                }
                let mut c = vec![0.0; h];
                let mut tanh_c = vec![0.0; h];
                let mut hh = vec![0.0; h];
                for j in 0..h {
                    c[j] = gates[h + j] * c_prev[j] + gates[j] * gates[2 * h + j];
                    tanh_c[j] = c[j].tanh();
                    hh[j] = gates[3 * h + j] * tanh_c[j];
                }
                layer_steps.push(StepCache {
                    gates,
                    c,
                    tanh_c,
                    h: hh,
                });
            }
            steps.push(layer_steps);
        }
        let hw = self.head_weight_index();
        let hb = self.params[self.head_bias_index()];
        let outputs = steps[self.layers - 1]
            .iter()
            .map(|st| hb + self.params[hw..hw + h].iter().zip(&st.h).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        Ok(ForwardTrace { steps, outputs })
    }

    /// One output per row, in row order.
    pub fn forward(&self, fm: &FeatureMatrix) -> Result<Vec<f64>> {
        Ok(self.trace(fm)?.outputs)
    }

    /// Adds the gradient of the masked sum of squared errors to `grad` and
    /// returns `(sse, active_rows)`.
    pub(crate) fn accumulate_gradient(
        &self,
        fm: &FeatureMatrix,
        targets: &[f64],
        mask: Option<&[bool]>,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<(f64, usize)> {
        if targets.len() != fm.rows() || mask.is_some_and(|m| m.len() != fm.rows()) {
            return Err(Error::ShapeMismatch(format!(
                "{} targets for {} rows",
                targets.len(),
                fm.rows()
            )));
        }
        if grad.len() != self.params.len() {
            return Err(Error::ShapeMismatch("gradient buffer size".into()));
        }
        let trace = self.trace(fm)?;
        let h = self.hidden;
        let t_len = fm.rows();
        let active = |t: usize| mask.is_none_or(|m| m[t]);

        let mut sse = 0.0;
        let mut count = 0;
        let mut dy = vec![0.0; t_len];
        for t in 0..t_len {
            if active(t) {
                let e = trace.outputs[t] - targets[t];
                sse += e * e;
                count += 1;
                dy[t] = 2.0 * e * scale;
            }
        }

        let hw = self.head_weight_index();
        let hb = self.head_bias_index();
        let top = &trace.steps[self.layers - 1];
        // Upstream gradient into each layer's hidden output, per time step.
        let mut dh_above: Vec<Vec<f64>> = vec![vec![0.0; h]; t_len];
        for t in 0..t_len {
            if dy[t] == 0.0 {
                continue;
            }
            grad[hb] += dy[t];
            for j in 0..h {
                grad[hw + j] += dy[t] * top[t].h[j];
                dh_above[t][j] = dy[t] * self.params[hw + j];
            }
        }

        let zeros = vec![0.0; h];
        for l in (0..self.layers).rev() {
            let s = self.layer(l);
            let steps = &trace.steps[l];
            let mut dx_below: Vec<Vec<f64>> = if l > 0 { vec![vec![0.0; s.input]; t_len] } else { Vec::new() };
            let mut dh_next = vec![0.0; h];
            let mut dc_next = vec![0.0; h];
            let mut dz = vec![0.0; 4 * h];
            for t in (0..t_len).rev() {
                let st = &steps[t];
                let c_prev = if t > 0 { &steps[t - 1].c[..] } else { &zeros[..] };
                let h_prev = if t > 0 { &steps[t - 1].h[..] } else { &zeros[..] };
                for j in 0..h {
                    let (i, f, g, o) = (st.gates[j], st.gates[h + j], st.gates[2 * h + j], st.gates[3 * h + j]);
                    let dh = dh_above[t][j] + dh_next[j];
                    let dc = dh * o * (1.0 - st.tanh_c[j] * st.tanh_c[j]) + dc_next[j];
                    dz[j] = dc * g * i * (1.0 - i);
                    dz[h + j] = dc * c_prev[j] * f * (1.0 - f);
                    dz[2 * h + j] = dc * i * (1.0 - g * g);
                    dz[3 * h + j] = dh * st.tanh_c[j] * o * (1.0 - o);
                    dc_next[j] = dc * f;
                }
                let x: &[f64] = if l == 0 { fm.row(t) } else { &trace.steps[l - 1][t].h };
                outer_add(grad, s.w, &dz, x);
                outer_add(grad, s.u, &dz, h_prev);
                for (g, d) in grad[s.b..s.b + 4 * h].iter_mut().zip(&dz) {
                    *g += d;
                }
                dh_next.iter_mut().for_each(|v| *v = 0.0);
                matvec_t_add(&self.params, s.u, &dz, &mut dh_next);
                if l > 0 {
                    matvec_t_add(&self.params, s.w, &dz, &mut dx_below[t]);
                }
            }
            if l > 0 {
                dh_above = dx_below;
            }
        }
        Ok((sse, count))
    }

    /// Mean squared error over active rows and its gradient for one sequence.
    pub fn loss_and_gradient(&self, fm: &FeatureMatrix, targets: &[f64], mask: Option<&[bool]>) -> Result<(f64, Vec<f64>)> {
        let count = match mask {
            Some(m) => m.iter().filter(|v| **v).count(),
            None => fm.rows(),
        };
        let mut grad = vec![0.0; self.params.len()];
        if count == 0 {
            self.check(fm)?;
            return Ok((0.0, grad));
        }
        let (sse, _) = self.accumulate_gradient(fm, targets, mask, 1.0 / count as f64, &mut grad)?;
        Ok((sse / count as f64, grad))
    }

    /// Masked mean squared error of one sequence.
    pub fn loss(&self, fm: &FeatureMatrix, targets: &[f64], mask: Option<&[bool]>) -> Result<f64> {
        let out = self.forward(fm)?;
        let mut sse = 0.0;
        let mut count = 0;
        for (t, (y, target)) in out.iter().zip(targets).enumerate() {
            if mask.is_none_or(|m| m[t]) {
                sse += (y - target) * (y - target);
                count += 1;
            }
        }
        Ok(if count == 0 { 0.0 } else { sse / count as f64 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn input(rows: usize, width: usize, rng: &mut ChaCha8Rng) -> FeatureMatrix {
        FeatureMatrix::new(rows, width, (0..rows * width).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn zero_model_outputs_head_bias() {
        let model = LstmModel::zeros(5, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = model.forward(&input(7, 5, &mut rng)).unwrap();
        assert_eq!(out, vec![0.0; 7]);
    }

    #[test]
    fn single_row_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = LstmModel::init(3, 4, 2, &mut rng);
        let out = model.forward(&input(1, 3, &mut rng)).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].is_finite());
    }

    #[test]
    fn width_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = LstmModel::init(3, 4, 2, &mut rng);
        assert!(matches!(model.forward(&input(2, 4, &mut rng)), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = LstmModel::init(3, 5, 2, &mut rng);
        let fm = input(6, 3, &mut rng);
        let targets = model.forward(&fm).unwrap();
        let (loss, grad) = model.loss_and_gradient(&fm, &targets, None).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn masked_rows_do_not_contribute() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = LstmModel::init(3, 5, 2, &mut rng);
        let fm = input(6, 3, &mut rng);
        let targets: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mask = [true, true, false, true, false, true];
        let (_, g1) = model.loss_and_gradient(&fm, &targets, Some(&mask)).unwrap();
        let mut moved = targets.clone();
        moved[2] += 100.0;
        moved[4] -= 50.0;
        let (_, g2) = model.loss_and_gradient(&fm, &moved, Some(&mask)).unwrap();
        assert_eq!(g1, g2);
        let none = [false; 6];
        let (l, g) = model.loss_and_gradient(&fm, &targets, Some(&none)).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn parameter_layout() {
        assert_eq!(LstmModel::parameter_count(14, 64, 2), 4 * 64 * (14 + 64 + 1) + 4 * 64 * (64 + 64 + 1) + 65);
        let m = LstmModel::zeros(2, 3, 2);
        let l1 = m.layer(1);
        assert_eq!(l1.w, 4 * 3 * (2 + 3 + 1));
        assert_eq!(l1.input, 3);
        assert_eq!(m.head_bias_index(), m.params().len() - 1);
    }
}
