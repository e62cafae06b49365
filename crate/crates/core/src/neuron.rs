//! Stochastic Bernoulli neurons and the deterministic LIF baselines.
//!
//! The firing probability is a hard sigmoid `clamp(κ·ξ, 0, 1)`. Its
//! straight-through derivative is `κ` on the closed band `0 ≤ κ·ξ ≤ 1` and zero
//! outside; the closed band keeps a resting membrane (`ξ = 0`) responsive to
//! drive, which the relaxation relies on when it starts from zero.

use crate::error::{Error, Result};
use crate::linalg::Tensor;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardSigmoid {
    pub kappa: f64,
}

impl HardSigmoid {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::Contract(format!(
                "kappa must be non-negative, got {kappa}"
            )));
        }
        Ok(Self { kappa })
    }

    #[inline]
    pub fn apply(&self, xi: f64) -> f64 {
        (self.kappa * xi).clamp(0.0, 1.0)
    }

    #[inline]
    pub fn derivative(&self, xi: f64) -> f64 {
        let z = self.kappa * xi;
        if (0.0..=1.0).contains(&z) {
            self.kappa
        } else {
            0.0
        }
    }
}

pub fn sigma(xi: &Tensor, kappa: f64) -> Tensor {
    let hs = HardSigmoid { kappa };
    xi.map(|v| hs.apply(v))
}

pub fn sigma_prime(xi: &Tensor, kappa: f64) -> Tensor {
    let hs = HardSigmoid { kappa };
    xi.map(|v| hs.derivative(v))
}

/// Binary spike tensor; every entry is exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTensor(Tensor);

impl SpikeTensor {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn count(&self) -> usize {
        self.0.data().iter().filter(|&&v| v == 1.0).count()
    }
}

/// Independent Bernoulli draws, one uniform per entry in index order.
pub fn sample_spikes(prob: &Tensor, rng: &mut RngStream) -> Result<SpikeTensor> {
    let mut out = vec![0.0; prob.len()];
    sample_into(prob.data(), rng, &mut out)?;
    Ok(SpikeTensor(Tensor::new(prob.shape().to_vec(), out)?))
}

/// Slice form of [`sample_spikes`] used by the relaxation loop.
pub fn sample_into(prob: &[f64], rng: &mut RngStream, out: &mut [f64]) -> Result<()> {
    for (o, &p) in out.iter_mut().zip(prob) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Contract(format!(
                "spike probability {p} outside [0, 1]"
            )));
        }
        *o = if rng.next_f64() < p { 1.0 } else { 0.0 };
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Deterministic baselines for the membrane-stability comparison.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowPassLifConfig {
    pub decay: f64,
    pub threshold: f64,
}

impl Default for LowPassLifConfig {
    fn default() -> Self {
        Self {
            decay: 0.9,
            threshold: 1.0,
        }
    }
}

/// LIF membrane with hard reset plus an exponential moving average of its
/// spike train; the average is what downstream layers read as a rate.
#[derive(Debug, Clone, PartialEq)]
pub struct LowPassLifState {
    pub v: Vec<f64>,
    pub filtered: Vec<f64>,
}

impl LowPassLifState {
    pub fn new(n: usize) -> Self {
        Self {
            v: vec![0.0; n],
            filtered: vec![0.0; n],
        }
    }
}

pub fn lif_lowpass_step(
    state: &mut LowPassLifState,
    input_current: &[f64],
    cfg: &LowPassLifConfig,
) -> Vec<f64> {
    let mut spikes = vec![0.0; state.v.len()];
    for (i, s) in spikes.iter_mut().enumerate() {
        let v = cfg.decay * state.v[i] + input_current[i];
        if v >= cfg.threshold {
            *s = 1.0;
            state.v[i] = 0.0;
        } else {
            state.v[i] = v;
        }
        state.filtered[i] = cfg.decay * state.filtered[i] + (1.0 - cfg.decay) * *s;
    }
    spikes
}

/// Steps between spikes of a reset-to-zero LIF under constant input `current`,
/// or `None` if the membrane never reaches threshold.
pub fn lif_lowpass_period(cfg: &LowPassLifConfig, current: f64) -> Option<usize> {
    let d = cfg.decay;
    let ratio = cfg.threshold * (1.0 - d) / current;
    if current <= 0.0 || ratio >= 1.0 {
        return None;
    }
    let n = ((1.0 - ratio).ln() / d.ln()).ceil();
    Some((n as usize).max(1))
}

/// Scalar multiply/add tally for the predictive-coding bookkeeping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCount {
    pub mults: usize,
    pub adds: usize,
}

/// Predictive-coding LIF: a decoder smooths the weighted input, an encoder
/// quantizes changes of `ρ(ξ)` into spikes through an integrating membrane.
#[derive(Debug, Clone, PartialEq)]
pub struct LifBaselineState {
    pub v: Vec<f64>,
    pub dec: Vec<f64>,
    pub enc: Vec<f64>,
    pub xi: Vec<f64>,
    pub alpha: f64,
    pub v_th: f64,
}

impl LifBaselineState {
    pub fn new(n: usize, alpha: f64, v_th: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Contract(format!(
                "predictive factor must be in (0, 1], got {alpha}"
            )));
        }
        Ok(Self {
            v: vec![0.0; n],
            dec: vec![0.0; n],
            enc: vec![0.0; n],
            xi: vec![0.0; n],
            alpha,
            v_th,
        })
    }
}

/// One update of all five predictive-coding lines, in order. Returns the
/// spikes and the coding overhead actually executed (decoder, encoder and
/// membrane arithmetic; the ξ update is shared with the stochastic neuron).
pub fn lif_predcoding_step(
    state: &mut LifBaselineState,
    weighted_input: &[f64],
    lambda: f64,
    rho: HardSigmoid,
) -> (Vec<f64>, OpCount) {
    lif_predcoding_step_nudged(state, weighted_input, lambda, rho, None)
}

/// [`lif_predcoding_step`] with an optional output pull `λβ(ŷ − ξ)` added to
/// the ξ update. The pull is not part of the coding overhead.
pub fn lif_predcoding_step_nudged(
    state: &mut LifBaselineState,
    weighted_input: &[f64],
    lambda: f64,
    rho: HardSigmoid,
    nudge: Option<(f64, &[f64])>,
) -> (Vec<f64>, OpCount) {
    let a = state.alpha;
    let mut ops = OpCount::default();
    let mut spikes = vec![0.0; state.v.len()];
    for i in 0..state.v.len() {
        let dec = (1.0 - a) * state.dec[i] + a * weighted_input[i];
        ops.mults += 2;
        ops.adds += 1;

        let xi_prev = state.xi[i];
        let mut xi = (1.0 - lambda) * xi_prev + lambda * rho.derivative(xi_prev) * dec;
        if let Some((beta, target)) = nudge {
            xi += lambda * beta * (target[i] - xi_prev);
        }

        let enc = (1.0 / a) * (rho.apply(xi) - (1.0 - a) * rho.apply(xi_prev));
        ops.mults += 2;
        ops.adds += 1;

        let s = if state.v[i] + enc > state.v_th {
            1.0
        } else {
            0.0
        };
        let v = state.v[i] + enc - s;
        ops.adds += 2;

        state.dec[i] = dec;
        state.xi[i] = xi;
        state.enc[i] = enc;
        state.v[i] = v;
        spikes[i] = s;
    }
    (spikes, ops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SampleRng;

    #[test]
    fn sigma_saturation_and_slope() {
        let hs = HardSigmoid::new(2.0).unwrap();
        assert_eq!(hs.apply(0.0), 0.0);
        assert_eq!(hs.apply(0.5), 1.0);
        assert_eq!(hs.apply(3.0), 1.0);
        assert_eq!(hs.apply(-1.0), 0.0);
        assert_eq!(hs.apply(0.25), 0.5);
        // κ = 2: the active band ends at ξ = 1/κ = 0.5.
        assert!(hs.apply(0.4999) < 1.0);
        assert!(HardSigmoid::new(-1.0).is_err());
    }

    #[test]
    fn sigma_prime_values() {
        let hs = HardSigmoid { kappa: 2.0 };
        assert_eq!(hs.derivative(0.25), 2.0);
        assert_eq!(hs.derivative(-1.0), 0.0);
        assert_eq!(hs.derivative(2.0), 0.0);
        assert_eq!(hs.derivative(0.0), 2.0);
    }

    #[test]
    fn sigma_prime_matches_central_differences() {
        let hs = HardSigmoid { kappa: 2.0 };
        let h = 1e-6;
        for &x in &[0.01, 0.1, 0.2, 0.33, 0.49] {
            let fd = (hs.apply(x + h) - hs.apply(x - h)) / (2.0 * h);
            assert!((fd - hs.derivative(x)).abs() <= 1e-8, "x={x} fd={fd}");
        }
        for &x in &[-0.3, 0.7, 5.0] {
            let fd = (hs.apply(x + h) - hs.apply(x - h)) / (2.0 * h);
            assert!((fd - hs.derivative(x)).abs() <= 1e-8);
        }
    }

    #[test]
    fn degenerate_bernoulli() {
        let mut rng = SampleRng::new(1, 0).stream(0, 0);
        let zeros = sample_spikes(&Tensor::zeros(&[1000]), &mut rng).unwrap();
        assert_eq!(zeros.count(), 0);
        let ones = sample_spikes(&Tensor::filled(&[1000], 1.0), &mut rng).unwrap();
        assert_eq!(ones.count(), 1000);
        assert!(matches!(
            sample_spikes(&Tensor::filled(&[2], 1.5), &mut rng),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn half_probability_mean() {
        let n = 100_000;
        let mut rng = SampleRng::new(7, 0).stream(0, 0);
        let s = sample_spikes(&Tensor::filled(&[n], 0.5), &mut rng).unwrap();
        let mean = s.count() as f64 / n as f64;
        // 3σ of a Binomial(n, 1/2) mean is 3·0.5/√n ≈ 0.0047.
        assert!((mean - 0.5).abs() <= 0.005, "mean {mean}");
    }

    #[test]
    fn resampled_mean_tracks_probability() {
        let probs = Tensor::new(vec![6], vec![0.0, 0.05, 0.3, 0.5, 0.9, 1.0]).unwrap();
        let draws = 10_000;
        let mut sum = vec![0.0; 6];
        let rng = SampleRng::new(11, 3);
        for t in 0..draws {
            let s = sample_spikes(&probs, &mut rng.stream(0, t)).unwrap();
            for (a, b) in sum.iter_mut().zip(s.tensor().data()) {
                *a += b;
            }
        }
        for (i, &p) in probs.data().iter().enumerate() {
            let mean = sum[i] / draws as f64;
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            assert!((mean - p).abs() <= 3.0 * se + 1e-12, "p={p} mean={mean}");
        }
    }

    #[test]
    fn spikes_uncorrelated_across_neurons() {
        let probs = Tensor::filled(&[4], 0.4);
        let draws = 20_000;
        let rng = SampleRng::new(5, 0);
        let mut joint = 0.0;
        let mut m0 = 0.0;
        let mut m1 = 0.0;
        for t in 0..draws {
            let s = sample_spikes(&probs, &mut rng.stream(0, t)).unwrap();
            let d = s.tensor().data();
            joint += d[0] * d[1];
            m0 += d[0];
            m1 += d[1];
        }
        let n = draws as f64;
        let cov = joint / n - (m0 / n) * (m1 / n);
        // Product of two Bernoulli(0.4): sd of the covariance estimate ≈ 0.24/√n.
        assert!(cov.abs() < 4.0 * 0.24 / n.sqrt(), "cov {cov}");
    }

    #[test]
    fn lowpass_zero_input_is_silent() {
        let cfg = LowPassLifConfig::default();
        let mut st = LowPassLifState::new(3);
        st.v = vec![0.5, 0.2, 0.9];
        for _ in 0..200 {
            let s = lif_lowpass_step(&mut st, &[0.0; 3], &cfg);
            assert!(s.iter().all(|&v| v == 0.0));
        }
        assert!(st.v.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn lowpass_constant_input_period() {
        let cfg = LowPassLifConfig::default();
        for &current in &[0.15, 0.3, 0.55, 1.2] {
            let expected = lif_lowpass_period(&cfg, current).unwrap();
            let mut st = LowPassLifState::new(1);
            let times: Vec<usize> = (0..200)
                .filter(|_| lif_lowpass_step(&mut st, &[current], &cfg)[0] == 1.0)
                .collect();
            assert!(times.len() >= 3);
            for w in times.windows(2) {
                assert_eq!(w[1] - w[0], expected, "current {current}");
            }
            assert_eq!(times[0] + 1, expected);
        }
        assert_eq!(lif_lowpass_period(&cfg, 0.05), None);
    }

    #[test]
    fn lowpass_membrane_stays_below_threshold_after_step() {
        let cfg = LowPassLifConfig::default();
        let mut st = LowPassLifState::new(4);
        for t in 0..300 {
            let input: Vec<f64> = (0..4).map(|i| ((t * (i + 1)) % 7) as f64 * 0.2).collect();
            lif_lowpass_step(&mut st, &input, &cfg);
            assert!(st.v.iter().all(|&v| v < cfg.threshold));
        }
    }

    #[test]
    fn predcoding_alpha_one_passes_input_through() {
        let mut st = LifBaselineState::new(3, 1.0, 0.5).unwrap();
        let rho = HardSigmoid { kappa: 2.0 };
        for t in 0..5 {
            let input = vec![0.1 * t as f64, -0.2, 0.3];
            lif_predcoding_step(&mut st, &input, 0.5, rho);
            assert_eq!(st.dec, input);
        }
        assert!(LifBaselineState::new(1, 0.0, 0.5).is_err());
    }

    #[test]
    fn predcoding_zero_stays_zero() {
        let mut st = LifBaselineState::new(5, 0.3, 0.5).unwrap();
        for _ in 0..50 {
            let (s, _) = lif_predcoding_step(&mut st, &[0.0; 5], 0.5, HardSigmoid { kappa: 2.0 });
            assert!(s.iter().all(|&v| v == 0.0));
        }
        assert!(st.v.iter().chain(&st.dec).chain(&st.xi).all(|&v| v == 0.0));
    }

    #[test]
    fn predcoding_overhead_is_four_mults_four_adds_per_neuron() {
        let n = 37;
        let mut st = LifBaselineState::new(n, 0.4, 0.5).unwrap();
        let (_, ops) = lif_predcoding_step(&mut st, &vec![0.2; n], 0.5, HardSigmoid { kappa: 2.0 });
        assert_eq!(
            ops,
            OpCount {
                mults: 4 * n,
                adds: 4 * n
            }
        );
    }
}
