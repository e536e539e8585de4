//! Discrete-time survival machinery: quantile time bins, hazard and
//! survival curves, and the censored negative log-likelihood with optional
//! up-weighting of uncensored patients.
//!
//! Conventions: bins are left-closed/right-open with the last bin open to
//! the right; the censor flag is 1 for censored patients; hazards come from
//! sigmoids of the model's logits; `survs[r]` is the probability of living
//! past interval `r`, the cumulative product of `1 - hazard` up to and
//! including `r`. The scalar ranking risk is the negated sum of the
//! survival curve, which rises whenever any hazard rises.

use crate::error::{CoreError, Result};
use crate::graph::{NodeId, Tape};
use crate::matrix::Matrix;

/// Interval cut-points for discretizing continuous survival times.
///
/// Interior cuts only; the implicit outer bounds are 0 and infinity.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeBins {
    cuts: Vec<f64>,
}

impl TimeBins {
    /// Fit interior cut-points at the `i/n_bins` empirical quantiles
    /// (linear interpolation) of the supplied uncensored event times.
    /// The caller must pass training-fold times only.
    pub fn fit(event_times: &[f64], n_bins: usize) -> Result<Self> {
        if n_bins < 2 {
            return Err(CoreError::Contract(format!("n_bins must be at least 2, got {n_bins}")));
        }
        let mut sorted: Vec<f64> = event_times.to_vec();
        sorted.retain(|t| t.is_finite() && *t > 0.0);
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
        let mut distinct = sorted.clone();
        distinct.dedup();
        if distinct.len() < n_bins {
            return Err(CoreError::BinFit(format!(
                "need at least {} distinct uncensored event times, got {}",
                n_bins,
                distinct.len()
            )));
        }
        let cuts: Vec<f64> = (1..n_bins)
            .map(|i| quantile_linear(&sorted, i as f64 / n_bins as f64))
            .collect();
        let strictly_increasing =
            cuts.windows(2).all(|w| w[0] < w[1]) && cuts[0] > 0.0;
        if !strictly_increasing {
            return Err(CoreError::BinFit(format!(
                "quantile cut-points are not strictly increasing: {cuts:?}"
            )));
        }
        Ok(TimeBins { cuts })
    }

    /// Construct from explicit interior cut-points.
    pub fn from_cuts(cuts: Vec<f64>) -> Result<Self> {
        if cuts.is_empty() || cuts.windows(2).any(|w| w[0] >= w[1]) || cuts[0] <= 0.0 {
            return Err(CoreError::BinFit(format!(
                "cut-points must be positive and strictly increasing: {cuts:?}"
            )));
        }
        Ok(TimeBins { cuts })
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    pub fn n_bins(&self) -> usize {
        self.cuts.len() + 1
    }

    /// Map a continuous time to its bin index; times beyond the last cut
    /// fall in the final bin.
    pub fn discretize(&self, t: f64) -> Result<usize> {
        if t <= 0.0 || !t.is_finite() {
            return Err(CoreError::Contract(format!("survival time must be positive and finite, got {t}")));
        }
        Ok(self.cuts.iter().filter(|&&c| c <= t).count())
    }
}

/// Empirical quantile with linear interpolation between order statistics.
fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Discretized ground truth for one patient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiscreteLabel {
    /// Bin index of the observed (event or censoring) time.
    pub bin: usize,
    /// True when the event was not observed.
    pub censored: bool,
}

impl DiscreteLabel {
    pub fn new(bin: usize, censored: bool) -> Self {
        DiscreteLabel { bin, censored }
    }
}

/// Per-bin hazards, the survival curve, and the scalar ranking risk.
#[derive(Clone, Debug)]
pub struct HazardCurve {
    pub hazards: Vec<f64>,
    pub survs: Vec<f64>,
    pub risk: f64,
}

impl HazardCurve {
    /// hazards = sigmoid(logits); survs by cumulative product; risk = -sum(survs).
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite { op: "hazards_from_logits" });
        }
        let hazards: Vec<f64> = logits.iter().map(|&z| 1.0 / (1.0 + (-z).exp())).collect();
        let mut survs = Vec::with_capacity(hazards.len());
        let mut acc = 1.0;
        for &h in &hazards {
            acc *= 1.0 - h;
            survs.push(acc);
        }
        let risk = -survs.iter().sum::<f64>();
        Ok(HazardCurve { hazards, survs, risk })
    }
}

/// On-graph counterpart of [`HazardCurve`]: 1 x n_bins hazard and survival
/// nodes plus the scalar risk node.
#[derive(Clone, Copy, Debug)]
pub struct HazardNodes {
    pub hazards: NodeId,
    pub survs: NodeId,
    pub risk: NodeId,
}

/// Record hazards, survival curve, and risk on the tape.
///
/// The survival curve is built as exp of a running sum of log(1 - h),
/// which keeps every step differentiable.
pub fn hazard_nodes(tape: &mut Tape, logits: NodeId) -> Result<HazardNodes> {
    let n_bins = tape.value(logits).cols();
    if tape.value(logits).rows() != 1 {
        return Err(CoreError::Contract(format!(
            "hazard logits must be a single row, got {} rows",
            tape.value(logits).rows()
        )));
    }
    let hazards = tape.sigmoid(logits);
    let one_minus = tape.scale_shift(hazards, -1.0, 1.0);
    let log_one_minus = tape.log_clamped(one_minus);
    // Upper-triangular ones: column r accumulates log(1-h_u) for u <= r.
    let tri = Matrix::from_fn(n_bins, n_bins, |u, r| if u <= r { 1.0 } else { 0.0 });
    let tri = tape.constant(tri);
    let log_survs = tape.matmul(log_one_minus, tri)?;
    let survs = tape.exp(log_survs);
    let total = tape.sum(survs);
    let risk = tape.scale(total, -1.0);
    Ok(HazardNodes { hazards, survs, risk })
}

fn one_hot(tape: &mut Tape, n: usize, index: usize) -> NodeId {
    let m = Matrix::from_fn(1, n, |_, c| if c == index { 1.0 } else { 0.0 });
    tape.constant(m)
}

/// log survs[bin] as a scalar node; `bin = None` encodes survs[-1] = 1.
fn log_surv_at(tape: &mut Tape, curve: &HazardNodes, bin: Option<usize>) -> Result<NodeId> {
    match bin {
        None => Ok(tape.constant(Matrix::scalar(0.0))),
        Some(b) => {
            let n = tape.value(curve.hazards).cols();
            let one_minus = tape.scale_shift(curve.hazards, -1.0, 1.0);
            let logs = tape.log_clamped(one_minus);
            let mask = Matrix::from_fn(1, n, |_, c| if c <= b { 1.0 } else { 0.0 });
            let mask = tape.constant(mask);
            let masked = tape.mul(logs, mask)?;
            Ok(tape.sum(masked))
        }
    }
}

/// log hazards[bin] as a scalar node.
fn log_hazard_at(tape: &mut Tape, curve: &HazardNodes, bin: usize) -> Result<NodeId> {
    let n = tape.value(curve.hazards).cols();
    let logs = tape.log_clamped(curve.hazards);
    let hot = one_hot(tape, n, bin);
    let masked = tape.mul(logs, hot)?;
    Ok(tape.sum(masked))
}

fn check_label(curve: &HazardNodes, tape: &Tape, label: DiscreteLabel) -> Result<()> {
    let n = tape.value(curve.hazards).cols();
    if label.bin >= n {
        return Err(CoreError::Contract(format!(
            "label bin {} out of range for {} bins",
            label.bin, n
        )));
    }
    Ok(())
}

/// Censored negative log-likelihood:
/// `-c log survs[Y] - (1-c) log survs[Y-1] - (1-c) log hazards[Y]`.
///
/// With `survival_third_term` the third term uses `survs[Y]` in place of
/// the hazard; the default hazard form is the one the combined loss
/// expects.
pub fn nll_loss(
    tape: &mut Tape,
    curve: &HazardNodes,
    label: DiscreteLabel,
    survival_third_term: bool,
) -> Result<NodeId> {
    check_label(curve, tape, label)?;
    let c = if label.censored { 1.0 } else { 0.0 };

    let ls_y = log_surv_at(tape, curve, Some(label.bin))?;
    let censored_term = tape.scale(ls_y, -c);

    let prev = if label.bin == 0 { None } else { Some(label.bin - 1) };
    let ls_prev = log_surv_at(tape, curve, prev)?;
    let event_surv_term = tape.scale(ls_prev, -(1.0 - c));

    let third = if survival_third_term {
        log_surv_at(tape, curve, Some(label.bin))?
    } else {
        log_hazard_at(tape, curve, label.bin)?
    };
    let event_third_term = tape.scale(third, -(1.0 - c));

    let partial = tape.add(censored_term, event_surv_term)?;
    tape.add(partial, event_third_term)
}

/// Uncensored-only loss: `-(1-c) log survs[Y-1] - (1-c) log hazards[Y]`.
/// Exactly zero for censored patients.
pub fn uncensored_loss(tape: &mut Tape, curve: &HazardNodes, label: DiscreteLabel) -> Result<NodeId> {
    check_label(curve, tape, label)?;
    let c = if label.censored { 1.0 } else { 0.0 };
    let prev = if label.bin == 0 { None } else { Some(label.bin - 1) };
    let ls_prev = log_surv_at(tape, curve, prev)?;
    let surv_term = tape.scale(ls_prev, -(1.0 - c));
    let lh = log_hazard_at(tape, curve, label.bin)?;
    let hazard_term = tape.scale(lh, -(1.0 - c));
    tape.add(surv_term, hazard_term)
}

/// `(1 - beta) * nll + beta * uncensored`.
pub fn combined_loss(
    tape: &mut Tape,
    curve: &HazardNodes,
    label: DiscreteLabel,
    beta: f64,
    survival_third_term: bool,
) -> Result<NodeId> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(CoreError::Contract(format!("beta must lie in [0, 1], got {beta}")));
    }
    let nll = nll_loss(tape, curve, label, survival_third_term)?;
    let unc = uncensored_loss(tape, curve, label)?;
    let weighted_nll = tape.scale(nll, 1.0 - beta);
    let weighted_unc = tape.scale(unc, beta);
    tape.add(weighted_nll, weighted_unc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::ParamStore;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn curve_for(tape: &mut Tape, logits: Vec<f64>) -> HazardNodes {
        let n = logits.len();
        let node = tape.constant(Matrix::from_vec(1, n, logits).unwrap());
        hazard_nodes(tape, node).unwrap()
    }

    #[test]
    fn fit_bins_on_uniform_times() {
        let times: Vec<f64> = (1..=8).map(|t| t as f64).collect();
        let bins = TimeBins::fit(&times, 4).unwrap();
        let expected = [2.75, 4.5, 6.25];
        for (c, e) in bins.cuts().iter().zip(expected) {
            assert_relative_eq!(c, &e, epsilon = 1e-12);
        }
        assert_eq!(bins.n_bins(), 4);
    }

    #[test]
    fn fit_bins_rejects_identical_times() {
        let times = vec![5.0; 10];
        let err = TimeBins::fit(&times, 4).unwrap_err();
        assert!(matches!(err, CoreError::BinFit(_)));
        assert!(err.to_string().contains('1'), "should name the count: {err}");
    }

    #[test]
    fn fit_bins_rejects_degenerate_quantiles() {
        // Four distinct values but heavily tied low quantiles.
        let times = vec![1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 3.0, 4.0];
        assert!(matches!(TimeBins::fit(&times, 4), Err(CoreError::BinFit(_))));
    }

    #[test]
    fn discretize_interval_convention() {
        let bins = TimeBins::from_cuts(vec![10.0, 20.0, 30.0]).unwrap();
        assert_eq!(bins.discretize(15.0).unwrap(), 1);
        assert_eq!(bins.discretize(5.0).unwrap(), 0);
        assert_eq!(bins.discretize(100.0).unwrap(), 3);
        // Left-closed, right-open.
        assert_eq!(bins.discretize(20.0).unwrap(), 2);
        assert!(bins.discretize(0.0).is_err());
        assert!(bins.discretize(-3.0).is_err());
    }

    #[test]
    fn zero_logits_curve_is_forced() {
        let curve = HazardCurve::from_logits(&[0.0; 4]).unwrap();
        for h in &curve.hazards {
            assert_relative_eq!(h, &0.5, epsilon = 1e-15);
        }
        let expected = [0.5, 0.25, 0.125, 0.0625];
        for (s, e) in curve.survs.iter().zip(expected) {
            assert_relative_eq!(s, &e, epsilon = 1e-15);
        }
        assert_relative_eq!(curve.risk, -0.9375, epsilon = 1e-15);
    }

    #[test]
    fn vanishing_hazards_push_risk_to_minus_n() {
        let curve = HazardCurve::from_logits(&[-50.0; 4]).unwrap();
        for s in &curve.survs {
            assert_relative_eq!(s, &1.0, epsilon = 1e-12);
        }
        assert_relative_eq!(curve.risk, -4.0, epsilon = 1e-10);
    }

    #[test]
    fn graph_curve_matches_plain_curve_and_product_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let logits: Vec<f64> = (0..4).map(|_| rng.random_range(-6.0..6.0)).collect();
            let plain = HazardCurve::from_logits(&logits).unwrap();

            let mut tape = Tape::new();
            let nodes = curve_for(&mut tape, logits.clone());
            let survs = tape.value(nodes.survs);

            // Independent product recomputation.
            let mut acc = 1.0;
            for (r, &h) in plain.hazards.iter().enumerate() {
                acc *= 1.0 - h;
                assert!((survs.get(0, r) - acc).abs() < 1e-12);
                assert!((plain.survs[r] - acc).abs() < 1e-12);
            }
            assert!((tape.value(nodes.risk).get(0, 0) - plain.risk).abs() < 1e-10);
            // Monotone non-increasing.
            for w in plain.survs.windows(2) {
                assert!(w[1] <= w[0] + 1e-15);
            }
        }
    }

    #[test]
    fn raising_any_hazard_raises_risk() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let logits: Vec<f64> = (0..4).map(|_| rng.random_range(-4.0..4.0)).collect();
            let base = HazardCurve::from_logits(&logits).unwrap();
            let bump = rng.random_range(0..4);
            let mut perturbed = logits.clone();
            perturbed[bump] += 0.5;
            let higher = HazardCurve::from_logits(&perturbed).unwrap();
            assert!(higher.risk > base.risk);
        }
    }

    #[test]
    fn censored_loss_is_negative_log_survival() {
        let mut tape = Tape::new();
        // Zero logits give survs = [0.5, 0.25, 0.125, 0.0625].
        let curve = curve_for(&mut tape, vec![0.0; 4]);
        let label = DiscreteLabel::new(2, true);
        let loss = nll_loss(&mut tape, &curve, label, false).unwrap();
        let expected = -(0.125f64.ln());
        assert_relative_eq!(tape.value(loss).get(0, 0), expected, epsilon = 1e-12);
    }

    #[test]
    fn censored_loss_named_example() {
        // survs[2] = 0.25 via hazards [0.5, 0.5, 0.0, ...].
        let mut tape = Tape::new();
        let curve = curve_for(&mut tape, vec![0.0, 0.0, -50.0, -50.0]);
        let loss = nll_loss(&mut tape, &curve, DiscreteLabel::new(2, true), false).unwrap();
        assert_relative_eq!(tape.value(loss).get(0, 0), -(0.25f64.ln()), epsilon = 1e-10);
    }

    #[test]
    fn uncensored_first_bin_loss() {
        let mut tape = Tape::new();
        let curve = curve_for(&mut tape, vec![0.0; 4]);
        let loss = nll_loss(&mut tape, &curve, DiscreteLabel::new(0, false), false).unwrap();
        assert_relative_eq!(tape.value(loss).get(0, 0), -(0.5f64.ln()), epsilon = 1e-12);
    }

    #[test]
    fn uncensored_middle_bin_matches_hand_oracle() {
        // survs[0] = 0.8, hazards[1] = 0.5.
        let h0: f64 = 0.2;
        let logit0 = (h0 / (1.0 - h0)).ln();
        let mut tape = Tape::new();
        let curve = curve_for(&mut tape, vec![logit0, 0.0, 0.0, 0.0]);
        let loss = nll_loss(&mut tape, &curve, DiscreteLabel::new(1, false), false).unwrap();
        let expected = -(0.8f64.ln()) - (0.5f64.ln());
        assert_relative_eq!(tape.value(loss).get(0, 0), expected, epsilon = 1e-12);
        assert_relative_eq!(tape.value(loss).get(0, 0), 0.916_290_731_874_155, epsilon = 1e-12);
    }

    #[test]
    fn uncensored_loss_vanishes_for_censored() {
        let mut tape = Tape::new();
        let curve = curve_for(&mut tape, vec![0.3, -0.7, 1.1, 0.2]);
        let loss = uncensored_loss(&mut tape, &curve, DiscreteLabel::new(2, true)).unwrap();
        assert_eq!(tape.value(loss).get(0, 0), 0.0);
    }

    #[test]
    fn uncensored_loss_random_curve_matches_hand_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let logits: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let plain = HazardCurve::from_logits(&logits).unwrap();
            let bin = rng.random_range(0..4);

            let mut tape = Tape::new();
            let curve = curve_for(&mut tape, logits.clone());
            let loss = uncensored_loss(&mut tape, &curve, DiscreteLabel::new(bin, false)).unwrap();

            let prev = if bin == 0 { 1.0 } else { plain.survs[bin - 1] };
            let expected = -prev.ln() - plain.hazards[bin].ln();
            assert_relative_eq!(tape.value(loss).get(0, 0), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn combined_loss_interpolates_endpoints() {
        let logits = vec![0.4, -0.2, 0.9, -1.3];
        let label = DiscreteLabel::new(1, false);
        let eval = |beta: f64| -> f64 {
            let mut tape = Tape::new();
            let curve = curve_for(&mut tape, logits.clone());
            let loss = combined_loss(&mut tape, &curve, label, beta, false).unwrap();
            tape.value(loss).get(0, 0)
        };
        let nll_only = eval(0.0);
        let unc_only = eval(1.0);
        let halfway = eval(0.5);

        let mut tape = Tape::new();
        let curve = curve_for(&mut tape, logits.clone());
        let nll_direct = nll_loss(&mut tape, &curve, label, false).unwrap();
        let unc_direct = uncensored_loss(&mut tape, &curve, label).unwrap();
        assert_relative_eq!(nll_only, tape.value(nll_direct).get(0, 0), epsilon = 1e-15);
        assert_relative_eq!(unc_only, tape.value(unc_direct).get(0, 0), epsilon = 1e-15);
        assert_relative_eq!(halfway, 0.5 * (nll_only + unc_only), epsilon = 1e-12);
    }

    #[test]
    fn combined_loss_rejects_beta_outside_unit_interval() {
        let mut tape = Tape::new();
        let curve = curve_for(&mut tape, vec![0.0; 4]);
        let label = DiscreteLabel::new(0, false);
        assert!(combined_loss(&mut tape, &curve, label, 1.5, false).is_err());
    }

    #[test]
    fn nll_loss_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..200 {
            let logits: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let bin = rng.random_range(0..4);
            let censored = rng.random_bool(0.4);
            let mut tape = Tape::new();
            let curve = curve_for(&mut tape, logits);
            let loss = nll_loss(&mut tape, &curve, DiscreteLabel::new(bin, censored), false).unwrap();
            assert!(tape.value(loss).get(0, 0) >= 0.0);
        }
    }

    #[test]
    fn printed_third_term_duplicates_survival_term() {
        // With the survival-form third term, a censored patient still gets
        // only the first term, but an uncensored one pays survs[Y] twice.
        let mut tape = Tape::new();
        let curve = curve_for(&mut tape, vec![0.0; 4]);
        let label = DiscreteLabel::new(1, false);
        let printed = nll_loss(&mut tape, &curve, label, true).unwrap();
        let expected = -(0.5f64.ln()) - (0.25f64.ln());
        assert_relative_eq!(tape.value(printed).get(0, 0), expected, epsilon = 1e-12);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut store = ParamStore::new();
        let logits = store.add("logits", Matrix::from_vec(1, 4, vec![0.3, -0.5, 0.8, 0.1]).unwrap());
        let label = DiscreteLabel::new(2, false);
        let err = crate::gradcheck::gradient_check(
            &mut store,
            |tape, store| {
                let node = tape.param(store, logits);
                let curve = hazard_nodes(tape, node)?;
                combined_loss(tape, &curve, label, 0.3, false)
            },
            16,
            crate::gradcheck::DEFAULT_STEP,
            3,
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }
}
