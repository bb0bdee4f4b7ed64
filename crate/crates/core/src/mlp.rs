//! Time-conditioned multilayer perceptron `f(z, t; θ)`.
//!
//! The network input is the state with the time appended as an extra
//! column, hidden layers use `tanh`, and the output layer is affine.

use crate::autodiff::{Gradients, Tape, Var};
use crate::dual::Dual;
use crate::error::{Error, Result};
use crate::steer::RngStream;
use crate::tensor::Array;

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `[out, in]`
    pub weight: Array,
    /// `[out]`
    pub bias: Array,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    layers: Vec<Layer>,
}

/// Parameter handles of an [`Mlp`] registered on a tape.
#[derive(Clone, Debug)]
pub struct MlpVars {
    layers: Vec<(Var, Var)>,
}

impl MlpVars {
    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}

impl Mlp {
    /// Widths run from input (`state_dim + 1`) to output (`state_dim`).
    /// Weights and biases are drawn from `U(−1/√fan_in, 1/√fan_in)`.
    pub fn new(widths: &[usize], rng: &mut RngStream) -> Result<Self> {
        Self::check_widths(widths)?;
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight = (0..fan_in * fan_out)
                    .map(|_| rng.uniform(-bound, bound))
                    .collect();
                let bias = (0..fan_out).map(|_| rng.uniform(-bound, bound)).collect();
                Layer {
                    weight: Array::from_vec(vec![fan_out, fan_in], weight).unwrap(),
                    bias: Array::vector(bias),
                }
            })
            .collect();
        Ok(Self {
            widths: widths.to_vec(),
            layers,
        })
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        Self::check_widths(widths)?;
        let layers = widths
            .windows(2)
            .map(|w| Layer {
                weight: Array::zeros(&[w[1], w[0]]),
                bias: Array::zeros(&[w[1]]),
            })
            .collect();
        Ok(Self {
            widths: widths.to_vec(),
            layers,
        })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Config("an MLP needs at least one layer".into()))?;
        let mut widths = vec![first.weight.rows_cols().1];
        for (i, l) in layers.iter().enumerate() {
            let (out, inp) = l.weight.rows_cols();
            if inp != *widths.last().unwrap() || l.bias.len() != out || l.weight.shape().len() != 2
            {
                return Err(Error::Config(format!("layer {i} has inconsistent shapes")));
            }
            widths.push(out);
        }
        Self::check_widths(&widths)?;
        Ok(Self { widths, layers })
    }

    fn check_widths(widths: &[usize]) -> Result<()> {
        if widths.len() < 2 {
            return Err(Error::Config("an MLP needs input and output widths".into()));
        }
        if widths.contains(&0) {
            return Err(Error::Config(format!("zero width in {widths:?}")));
        }
        if widths[0] != widths[widths.len() - 1] + 1 {
            return Err(Error::Config(format!(
                "input width must be state width + 1 (time column), got {widths:?}"
            )));
        }
        Ok(())
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn state_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer, weight before bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Contract(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            for slot in [&mut l.weight, &mut l.bias] {
                let n = slot.len();
                slot.data_mut().copy_from_slice(&flat[offset..offset + n]);
                offset += n;
            }
        }
        Ok(())
    }

    fn check_state(&self, z: &Array) -> Result<()> {
        let (_, d) = z.rows_cols();
        if d != self.state_dim() {
            return Err(Error::Config(format!(
                "state width {d} does not match network state width {}",
                self.state_dim()
            )));
        }
        Ok(())
    }

    /// `f(z, t)` for `z` of shape `[d]` or `[n, d]`.
    pub fn forward(&self, z: &Array, t: f64) -> Result<Array> {
        self.check_state(z)?;
        let mut h = z.append_column(t);
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = Array::linear(&h, &l.weight, Some(&l.bias))?;
            if i < last {
                h = h.map(f64::tanh);
            }
            if !h.is_finite() {
                return Err(Error::NonFinite { layer: i });
            }
        }
        Ok(h)
    }

    pub fn register(&self, tape: &mut Tape) -> MlpVars {
        let layers = self
            .layers
            .iter()
            .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
            .collect();
        MlpVars { layers }
    }

    /// Recorded forward pass; `vars` must come from [`Mlp::register`] on the same tape.
    pub fn forward_traced(&self, tape: &mut Tape, vars: &MlpVars, z: Var, t: f64) -> Result<Var> {
        self.check_state(tape.value(z))?;
        let mut h = tape.append_column(z, t);
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in vars.layers.iter().enumerate() {
            h = tape.linear(h, w, Some(b))?;
            if i < last {
                h = tape.tanh(h);
            }
            if !tape.value(h).is_finite() {
                return Err(Error::NonFinite { layer: i });
            }
        }
        Ok(h)
    }

    fn check_scalar_state(&self) -> Result<()> {
        if self.state_dim() != 1 {
            return Err(Error::Contract(format!(
                "exact derivatives need a 1-dimensional state, network has {}",
                self.state_dim()
            )));
        }
        Ok(())
    }

    /// `(f(z, t), ∂f/∂z)` for a scalar state, by forward-mode dual numbers.
    pub fn dual_eval(&self, z: f64, t: f64) -> Result<(f64, f64)> {
        self.check_scalar_state()?;
        let mut h = vec![Dual::variable(z), Dual::constant(t)];
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let (out, inp) = l.weight.rows_cols();
            let w = l.weight.data();
            let mut next = Vec::with_capacity(out);
            for o in 0..out {
                let mut acc = Dual::constant(l.bias.data()[o]);
                for (j, hj) in h.iter().enumerate() {
                    acc = acc + hj.scale(w[o * inp + j]);
                }
                next.push(if i < last { acc.tanh() } else { acc });
            }
            if next.iter().any(|d| !d.primal.is_finite() || !d.tangent.is_finite()) {
                return Err(Error::NonFinite { layer: i });
            }
            h = next;
        }
        Ok((h[0].primal, h[0].tangent))
    }

    /// Recorded `(f(z, t), ∂f/∂z)` for `z: [n, 1]`. The tangent is propagated
    /// with tape operations so that it can itself be differentiated in θ.
    pub fn forward_traced_with_tangent(
        &self,
        tape: &mut Tape,
        vars: &MlpVars,
        z: Var,
        t: f64,
    ) -> Result<(Var, Var)> {
        self.check_scalar_state()?;
        self.check_state(tape.value(z))?;
        let (n, _) = tape.value(z).rows_cols();
        let mut h = tape.append_column(z, t);
        let seed = Array::from_vec(vec![n, 2], [1.0, 0.0].repeat(n))?;
        let mut dh = tape.constant(seed);
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in vars.layers.iter().enumerate() {
            h = tape.linear(h, w, Some(b))?;
            dh = tape.linear(dh, w, None)?;
            if i < last {
                h = tape.tanh(h);
                let sq = tape.square(h);
                let slope = tape.affine(sq, -1.0, 1.0);
                dh = tape.mul(slope, dh)?;
            }
            if !tape.value(h).is_finite() || !tape.value(dh).is_finite() {
                return Err(Error::NonFinite { layer: i });
            }
        }
        Ok((h, dh))
    }

    /// Flattened parameter gradient in [`Mlp::params`] order; unreachable
    /// parameters contribute zeros.
    pub fn collect_grads(&self, vars: &MlpVars, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (l, &(w, b)) in self.layers.iter().zip(&vars.layers) {
            out.extend_from_slice(grads.get_or_zeros(w, &l.weight).data());
            out.extend_from_slice(grads.get_or_zeros(b, &l.bias).data());
        }
        out
    }
}

/// Maximum relative error between the tape gradient of `loss` and central
/// finite differences with step `eps`, over all parameters of `net`.
pub fn grad_check<F>(net: &Mlp, eps: f64, loss: F) -> Result<f64>
where
    F: Fn(&Mlp, &mut Tape, &MlpVars) -> Result<Var>,
{
    grad_check_on(net, eps, &loss, Tape::new)
}

fn grad_check_on<F>(net: &Mlp, eps: f64, loss: &F, new_tape: impl Fn() -> Tape) -> Result<f64>
where
    F: Fn(&Mlp, &mut Tape, &MlpVars) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Config(format!("eps = {eps} must lie in (0, 1e-2]")));
    }
    let mut tape = new_tape();
    let vars = net.register(&mut tape);
    let out = loss(net, &mut tape, &vars)?;
    let analytic = net.collect_grads(&vars, &tape.backward(out)?);

    let value_at = |params: &[f64]| -> Result<f64> {
        let mut probe = net.clone();
        probe.set_params(params)?;
        let mut tape = new_tape();
        let vars = probe.register(&mut tape);
        let out = loss(&probe, &mut tape, &vars)?;
        tape.value(out).item()
    };

    let base = net.params();
    let mut worst: f64 = 0.0;
    for (i, ad) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[i] = base[i] + eps;
        let up = value_at(&p)?;
        p[i] = base[i] - eps;
        let down = value_at(&p)?;
        let fd = (up - down) / (2.0 * eps);
        worst = worst.max((ad - fd).abs() / (fd.abs() + 1e-12));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeded(widths: &[usize], seed: u64) -> Mlp {
        Mlp::new(widths, &mut RngStream::new(seed, 0)).unwrap()
    }

    fn sum_of_squares(net: &Mlp, tape: &mut Tape, vars: &MlpVars) -> Result<Var> {
        let z = tape.constant(Array::from_vec(vec![3, 2], vec![0.3, -0.8, 0.5, 0.1, -0.9, 0.7])?);
        let f = net.forward_traced(tape, vars, z, 0.4)?;
        let sq = tape.square(f);
        Ok(tape.sum(sq))
    }

    /// Reference evaluation written directly against the raw weights.
    fn reference_forward(net: &Mlp, z: &[f64], t: f64) -> Vec<f64> {
        let mut h: Vec<f64> = z.iter().copied().chain([t]).collect();
        let n_layers = net.layers().len();
        for (i, l) in net.layers().iter().enumerate() {
            let (out, inp) = l.weight.rows_cols();
            let mut next = vec![0.0; out];
            for (o, slot) in next.iter_mut().enumerate() {
                let mut s = l.bias.data()[o];
                for j in 0..inp {
                    s += l.weight.data()[o * inp + j] * h[j];
                }
                *slot = if i + 1 < n_layers { s.tanh() } else { s };
            }
            h = next;
        }
        h
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[3, 8, 2]).unwrap();
        let out = net.forward(&Array::vector(vec![1.5, -2.0]), 0.7).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        let layer = Layer {
            weight: Array::from_vec(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap(),
            bias: Array::zeros(&[2]),
        };
        let net = Mlp::from_layers(vec![layer]).unwrap();
        let z = Array::vector(vec![0.25, -4.0]);
        assert_eq!(net.forward(&z, 9.0).unwrap(), z);
    }

    #[test]
    fn forward_matches_reference_evaluation() {
        let net = seeded(&[3, 16, 16, 2], 5);
        let z = [0.2, -0.6];
        let expected = reference_forward(&net, &z, 0.35);
        let got = net.forward(&Array::vector(z.to_vec()), 0.35).unwrap();
        for (a, b) in got.data().iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-14);
        }
        let mut tape = Tape::new();
        let vars = net.register(&mut tape);
        let zv = tape.constant(Array::vector(z.to_vec()));
        let traced = net.forward_traced(&mut tape, &vars, zv, 0.35).unwrap();
        assert_eq!(tape.value(traced), &got);
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let net = seeded(&[3, 4, 2], 0);
        let err = net.forward(&Array::vector(vec![1.0, 2.0, 3.0]), 0.0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(matches!(Mlp::zeros(&[3, 4, 3]), Err(Error::Config(_))));
    }

    #[test]
    fn non_finite_output_names_layer() {
        let mut net = seeded(&[2, 4, 1], 0);
        let mut p = net.params();
        let n = p.len();
        p[n - 1] = f64::INFINITY;
        net.set_params(&p).unwrap();
        let err = net.forward(&Array::scalar(0.0), 0.0).unwrap_err();
        assert!(matches!(err, Error::NonFinite { layer: 1 }));
    }

    #[test]
    fn initialization_respects_fan_in_bound() {
        let net = seeded(&[2, 500, 1], 3);
        let bound0 = 1.0 / 2f64.sqrt();
        assert!(net.layers()[0].weight.max_abs() <= bound0);
        let bound1 = 1.0 / 500f64.sqrt();
        assert!(net.layers()[1].weight.max_abs() <= bound1);
    }

    #[test]
    fn dual_eval_linear_and_tanh() {
        let lin = Mlp::from_layers(vec![Layer {
            weight: Array::from_vec(vec![1, 2], vec![3.0, 0.0]).unwrap(),
            bias: Array::zeros(&[1]),
        }])
        .unwrap();
        assert_eq!(lin.dual_eval(1.5, 0.3).unwrap(), (4.5, 3.0));

        let tanh_net = Mlp::from_layers(vec![
            Layer {
                weight: Array::from_vec(vec![1, 2], vec![1.0, 0.0]).unwrap(),
                bias: Array::zeros(&[1]),
            },
            Layer {
                weight: Array::from_vec(vec![1, 1], vec![1.0]).unwrap(),
                bias: Array::zeros(&[1]),
            },
        ])
        .unwrap();
        assert_eq!(tanh_net.dual_eval(0.0, 0.9).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn dual_eval_matches_finite_difference() {
        let net = seeded(&[2, 32, 32, 1], 17);
        let (_, d) = net.dual_eval(0.7, 0.2).unwrap();
        let h = 1e-6;
        let f = |z: f64| net.forward(&Array::scalar(z), 0.2).unwrap().item().unwrap();
        let fd = (f(0.7 + h) - f(0.7 - h)) / (2.0 * h);
        assert!((d - fd).abs() / fd.abs() <= 1e-6, "{d} vs {fd}");
    }

    #[test]
    fn dual_eval_rejects_vector_state() {
        let net = seeded(&[3, 4, 2], 0);
        assert!(matches!(net.dual_eval(0.0, 0.0), Err(Error::Contract(_))));
    }

    #[test]
    fn traced_tangent_agrees_with_dual() {
        let net = seeded(&[2, 24, 24, 1], 21);
        let zs = [-1.2, -0.1, 0.4, 0.9];
        let mut tape = Tape::new();
        let vars = net.register(&mut tape);
        let z = tape.constant(Array::from_vec(vec![4, 1], zs.to_vec()).unwrap());
        let (f, df) = net.forward_traced_with_tangent(&mut tape, &vars, z, 0.6).unwrap();
        for (i, &zi) in zs.iter().enumerate() {
            let (fv, dv) = net.dual_eval(zi, 0.6).unwrap();
            let tf = tape.value(f).data()[i];
            let td = tape.value(df).data()[i];
            assert!((tf - fv).abs() <= 1e-10 * fv.abs().max(1.0));
            assert!((td - dv).abs() <= 1e-10 * dv.abs().max(1e-300));
        }
    }

    #[test]
    fn grad_check_zero_net() {
        let net = Mlp::zeros(&[3, 16, 2]).unwrap();
        let err = grad_check(&net, 1e-5, sum_of_squares).unwrap();
        assert!(err <= 1e-8, "{err}");
    }

    #[test]
    fn grad_check_seeded_net() {
        for seed in 0..3 {
            let net = seeded(&[3, 16, 2], seed);
            let err = grad_check(&net, 1e-5, sum_of_squares).unwrap();
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn grad_check_catches_corrupted_rule() {
        let net = seeded(&[3, 16, 2], 1);
        let broken = || {
            let mut t = Tape::new();
            t.break_tanh_rule();
            t
        };
        let err = grad_check_on(&net, 1e-5, &sum_of_squares, broken).unwrap();
        assert!(err > 1e-2, "{err}");
    }

    #[test]
    fn grad_check_rejects_bad_eps() {
        let net = seeded(&[3, 4, 2], 1);
        assert!(grad_check(&net, 0.5, sum_of_squares).is_err());
        assert!(grad_check(&net, 0.0, sum_of_squares).is_err());
    }

    #[test]
    fn tangent_path_gradients_match_finite_differences() {
        let net = seeded(&[2, 8, 1], 9);
        let loss = |net: &Mlp, tape: &mut Tape, vars: &MlpVars| -> Result<Var> {
            let z = tape.constant(Array::from_vec(vec![2, 1], vec![0.3, -0.5])?);
            let (f, df) = net.forward_traced_with_tangent(tape, vars, z, 0.2)?;
            let prod = tape.mul(f, df)?;
            let e = tape.exp(prod);
            Ok(tape.sum(e))
        };
        let err = grad_check(&net, 1e-5, loss).unwrap();
        assert!(err <= 1e-4, "{err}");
    }
}
