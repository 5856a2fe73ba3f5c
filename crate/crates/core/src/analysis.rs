//! Closed-form reliability results.
//!
//! Two loss conventions coexist here. The single-view and uniform
//! multi-view results take per-transmission or per-view **loss**
//! probabilities. The periodic Zipf results ([`PeriodicZipfParams`]) take a
//! per-view **success** probability.

use thiserror::Error;

use crate::model::{
    ApTransmissionPolicy, ChannelId, Client, LossModel, LossProfile, ModelError, TransmissionPlan, ViewId,
};

/// Profiles with any loss probability below this are evaluated in log space.
pub const LOG_SPACE_THRESHOLD: f64 = 1e-6;

const RANGE_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("a video needs at least two views, got {0}")]
    TooFewViews(u16),
    #[error("synthesis range must be at least 1")]
    ZeroRange,
    #[error("desired view {view} outside 1..={views}")]
    ViewOutOfRange { view: u16, views: u16 },
    #[error("channel {0} is not available to the client")]
    ChannelUnavailable(ChannelId),
    #[error("client has no desired view")]
    NoDesiredViews,
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("spacing {spacing} must lie in 1..={range}")]
    InvalidSpacing { spacing: u16, range: u16 },
    #[error("success probability must be positive")]
    ZeroSuccess,
    #[error("position {position} outside 1..={period}")]
    PositionOutOfRange { position: usize, period: usize },
    #[error("invalid periodic Zipf parameters: {0}")]
    InvalidZipf(String),
}

/// Probability that a client neither receives nor synthesizes its view.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct FailureProbability(f64);

impl FailureProbability {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Fraction of subscribed views obtained by reception or synthesis.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct AcquisitionRatio(f64);

impl AcquisitionRatio {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Range-checks a computed probability and clamps rounding residue.
fn settle(x: f64) -> f64 {
    debug_assert!(
        (-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&x),
        "computed probability {x} outside [0, 1]"
    );
    x.clamp(0.0, 1.0)
}

fn check_probability(p: f64) -> Result<(), AnalysisError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(AnalysisError::InvalidProbability(p))
    }
}

fn check_geometry(views: u16, range: u16, desired: ViewId) -> Result<(), AnalysisError> {
    if views < 2 {
        return Err(AnalysisError::TooFewViews(views));
    }
    if range < 1 {
        return Err(AnalysisError::ZeroRange);
    }
    if desired.index() > views {
        return Err(AnalysisError::ViewOutOfRange { view: desired.index(), views });
    }
    Ok(())
}

/// Per-view loss probabilities `L_j = prod p_{c,r}^{n_{j,c,r}}` of one client
/// under one plan, indexed by view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewLosses {
    views: u16,
    repr: LossRepr,
}

#[derive(Debug, Clone, PartialEq)]
enum LossRepr {
    Linear(Vec<f64>),
    Log(Vec<f64>),
}

impl ViewLosses {
    /// Losses of views `1..=views` for a client with `profile` under `plan`.
    /// Transmissions on pairs outside the profile are unreceivable.
    pub fn from_plan(profile: &LossProfile, plan: &TransmissionPlan, views: u16) -> Self {
        let log_space = profile.min_probability() < LOG_SPACE_THRESHOLD;
        let mut values = vec![if log_space { 0.0 } else { 1.0 }; usize::from(views)];
        for (key, n) in plan.iter() {
            let Some(slot) = values.get_mut(usize::from(key.view.index()).wrapping_sub(1)) else {
                continue;
            };
            let Some(p) = profile.get(key.channel, key.rate) else {
                continue;
            };
            if log_space {
                *slot += f64::from(n) * p.ln();
            } else {
                *slot *= p.powi(n as i32);
            }
        }
        let repr = if log_space { LossRepr::Log(values) } else { LossRepr::Linear(values) };
        ViewLosses { views, repr }
    }

    /// Builds losses directly from per-view values (index 0 is view 1).
    pub fn from_values(losses: Vec<f64>) -> Self {
        let views = losses.len() as u16;
        if losses.iter().any(|&p| p < LOG_SPACE_THRESHOLD) {
            ViewLosses { views, repr: LossRepr::Log(losses.iter().map(|p| p.ln()).collect()) }
        } else {
            ViewLosses { views, repr: LossRepr::Linear(losses) }
        }
    }

    pub fn views(&self) -> u16 {
        self.views
    }

    pub fn is_log_space(&self) -> bool {
        matches!(self.repr, LossRepr::Log(_))
    }

    pub fn loss(&self, view: ViewId) -> f64 {
        let i = usize::from(view.index()) - 1;
        match &self.repr {
            LossRepr::Linear(v) => v[i],
            LossRepr::Log(v) => v[i].exp(),
        }
    }

    /// Failure probability for a desired view (single-view subscription).
    ///
    /// Boundary views can only be received directly. An interior view `k`
    /// fails when it is lost and either (a) the nearest received left view is
    /// `k - d` for some `1 <= d <= R-1` while every right view up to
    /// `k + min(R-d, M-k)` is lost, or (b) no left view within `R-1` is
    /// received. These events are disjoint and cover all failures.
    pub fn failure(&self, desired: ViewId, range: u16) -> f64 {
        let k = desired.index();
        let m = self.views;
        match &self.repr {
            LossRepr::Linear(loss) => {
                let l = |v: u16| loss[usize::from(v) - 1];
                if k == 1 || k == m {
                    return l(k);
                }
                let mut total = 0.0;
                // desired plus every left view closer than the current candidate
                let mut left_lost = l(k);
                for d in 1..range {
                    if d >= k {
                        break;
                    }
                    let left = k - d;
                    let reach = (range - d).min(m - k);
                    let right_lost: f64 = (1..=reach).map(|o| l(k + o)).product();
                    total += (1.0 - l(left)) * left_lost * right_lost;
                    left_lost *= l(left);
                }
                let depth = (range - 1).min(k - 1);
                let no_left: f64 = (0..=depth).map(|q| l(k - q)).product();
                total + no_left
            }
            LossRepr::Log(ln) => {
                let l = |v: u16| ln[usize::from(v) - 1];
                if k == 1 || k == m {
                    return l(k).exp();
                }
                let mut total = 0.0;
                let mut left_lost = l(k);
                for d in 1..range {
                    if d >= k {
                        break;
                    }
                    let left = k - d;
                    let reach = (range - d).min(m - k);
                    let right_lost: f64 = (1..=reach).map(|o| l(k + o)).sum();
                    total += -l(left).exp_m1() * (left_lost + right_lost).exp();
                    left_lost += l(left);
                }
                let depth = (range - 1).min(k - 1);
                let no_left: f64 = (0..=depth).map(|q| l(k - q)).sum();
                total + no_left.exp()
            }
        }
    }
}

/// Probability that `view` is not received in any of its transmissions.
pub fn view_loss_probability(
    client: &Client,
    view: ViewId,
    plan: &TransmissionPlan,
    model: &LossModel,
) -> Result<f64, AnalysisError> {
    let profile = LossProfile::build(model, client)?;
    Ok(view_loss_with_profile(&profile, view, plan))
}

pub fn view_loss_with_profile(profile: &LossProfile, view: ViewId, plan: &TransmissionPlan) -> f64 {
    let loss: f64 = plan
        .view_entries(view)
        .filter_map(|(key, n)| profile.get(key.channel, key.rate).map(|p| p.powi(n as i32)))
        .product();
    settle(loss)
}

/// View failure probability of a multi-radio client that listens on every
/// channel and rate it supports.
pub fn view_failure_probability(
    client: &Client,
    desired: ViewId,
    plan: &TransmissionPlan,
    model: &LossModel,
    views: u16,
    range: u16,
) -> Result<FailureProbability, AnalysisError> {
    check_geometry(views, range, desired)?;
    let profile = LossProfile::build(model, client)?;
    Ok(failure_with_profile(&profile, desired, plan, views, range))
}

/// Same as [`view_failure_probability`] for a client restricted to one
/// channel at a time; rate products still run over all its rates.
pub fn view_failure_probability_single_radio(
    client: &Client,
    fixed_channel: ChannelId,
    desired: ViewId,
    plan: &TransmissionPlan,
    model: &LossModel,
    views: u16,
    range: u16,
) -> Result<FailureProbability, AnalysisError> {
    check_geometry(views, range, desired)?;
    if !client.channels().contains(&fixed_channel) {
        return Err(AnalysisError::ChannelUnavailable(fixed_channel));
    }
    let profile = LossProfile::build(model, client)?.restricted_to_channel(fixed_channel);
    Ok(failure_with_profile(&profile, desired, plan, views, range))
}

/// Failure probability from a pre-resolved loss profile. Geometry must
/// already be valid.
pub fn failure_with_profile(
    profile: &LossProfile,
    desired: ViewId,
    plan: &TransmissionPlan,
    views: u16,
    range: u16,
) -> FailureProbability {
    let losses = ViewLosses::from_plan(profile, plan, views);
    FailureProbability(settle(losses.failure(desired, range)))
}

/// Expected fraction of the client's desired views obtained.
pub fn expected_alpha(
    client: &Client,
    plan: &TransmissionPlan,
    model: &LossModel,
    views: u16,
    range: u16,
) -> Result<AcquisitionRatio, AnalysisError> {
    let desired = client.desired_views();
    if desired.is_empty() {
        return Err(AnalysisError::NoDesiredViews);
    }
    for &k in desired {
        check_geometry(views, range, k)?;
    }
    let profile = LossProfile::build(model, client)?;
    let losses = ViewLosses::from_plan(&profile, plan, views);
    let obtained: f64 = desired.iter().map(|&k| 1.0 - settle(losses.failure(k, range))).sum();
    Ok(AcquisitionRatio(settle(obtained / desired.len() as f64)))
}

/// Per-view loss `p_i` when the AP's transmission counts are random:
/// `prod_{c,r} sum_n p^AP_{c,r}(n) p_{i,c,r}^n`.
pub fn aggregate_loss_probability(
    client: &Client,
    policy: &ApTransmissionPolicy,
    model: &LossModel,
) -> Result<f64, AnalysisError> {
    let profile = LossProfile::build(model, client)?;
    Ok(aggregate_loss_with_profile(&profile, policy))
}

pub fn aggregate_loss_with_profile(profile: &LossProfile, policy: &ApTransmissionPolicy) -> f64 {
    let loss: f64 = profile
        .iter()
        .map(|((c, r), p)| match policy.distribution(c, r) {
            None => 1.0,
            Some(dist) => dist.iter().enumerate().map(|(n, w)| w * p.powi(n as i32)).sum(),
        })
        .product();
    settle(loss)
}

/// Long-run acquisition ratio for uniform multi-view subscription, every
/// view multicast, per-view loss `p`:
/// `(1-p) * (sum_{k=1}^{R} k (1-p) p^{k-1} + p^R)`.
pub fn asymptotic_alpha(p: f64, range: u16) -> Result<AcquisitionRatio, AnalysisError> {
    asymptotic_alpha_spaced(p, range, 1)
}

/// Long-run acquisition ratio when only one view in every `spacing` views is
/// multicast. With `spacing = 1` this is [`asymptotic_alpha`].
pub fn asymptotic_alpha_spaced(p: f64, range: u16, spacing: u16) -> Result<AcquisitionRatio, AnalysisError> {
    check_probability(p)?;
    if range < 1 {
        return Err(AnalysisError::ZeroRange);
    }
    if spacing < 1 || spacing > range {
        return Err(AnalysisError::InvalidSpacing { spacing, range });
    }
    let hops = i32::from(range / spacing);
    let s = f64::from(spacing);
    let q = 1.0 - p;
    let bracket: f64 =
        (1..=hops).map(|k| s * f64::from(k) * q * p.powi(k - 1)).sum::<f64>() + p.powi(hops);
    Ok(AcquisitionRatio(settle(q * bracket / s)))
}

/// Periodic Zipf subscription: a view at cyclic position `pos` in `1..=m` is
/// subscribed with probability `c / pos^s`; each view is received with
/// **success** probability `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicZipfParams {
    period: usize,
    exponent: f64,
    scale: f64,
    success: f64,
}

impl PeriodicZipfParams {
    pub fn new(period: usize, exponent: f64, scale: f64, success: f64) -> Result<Self, AnalysisError> {
        if period < 1 {
            return Err(AnalysisError::InvalidZipf("period must be at least 1".into()));
        }
        if !(exponent.is_finite() && exponent >= 0.0) {
            return Err(AnalysisError::InvalidZipf(format!("exponent {exponent} must be >= 0")));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(AnalysisError::InvalidZipf(format!("scale {scale} must be > 0")));
        }
        check_probability(success)?;
        let params = PeriodicZipfParams { period, exponent, scale, success };
        // c / pos^s is largest at pos = 1 for s >= 0
        if params.subscription_probability(1) > 1.0 {
            return Err(AnalysisError::InvalidZipf(format!("scale {scale} gives a probability above 1")));
        }
        Ok(params)
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn success(&self) -> f64 {
        self.success
    }

    /// Subscription probability at cyclic position `pos` in `1..=m`.
    pub fn subscription_probability(&self, pos: usize) -> f64 {
        self.scale / (pos as f64).powf(self.exponent)
    }

    /// Cyclic position of the 1-based view index `view`.
    pub fn position_of(&self, view: u64) -> usize {
        ((view - 1) % self.period as u64) as usize + 1
    }

    /// Position reached `steps` views after position `pos`.
    pub fn advance(&self, pos: usize, steps: usize) -> usize {
        (pos - 1 + steps) % self.period + 1
    }

    /// Expected subscribed views per period: `sum_l c / l^s`.
    pub fn period_mass(&self) -> f64 {
        (1..=self.period).map(|l| self.subscription_probability(l)).sum()
    }

    /// Expected number of subscribed views among the `x` positions after `j`.
    pub fn expected_subscribed_after(&self, j: usize, x: usize) -> f64 {
        let full = x / self.period;
        let partial: f64 = (1..=x % self.period).map(|l| self.subscription_probability(self.advance(j, l))).sum();
        full as f64 * self.period_mass() + partial
    }

    fn check_position(&self, j: usize) -> Result<(), AnalysisError> {
        if j < 1 || j > self.period {
            Err(AnalysisError::PositionOutOfRange { position: j, period: self.period })
        } else {
            Ok(())
        }
    }
}

/// Transition matrix of the position of successive received views (row and
/// column `i` correspond to position `i + 1`).
pub fn periodic_zipf_transition_matrix(success: f64, period: usize) -> Result<Vec<Vec<f64>>, AnalysisError> {
    check_probability(success)?;
    if success == 0.0 {
        return Err(AnalysisError::ZeroSuccess);
    }
    if period < 1 {
        return Err(AnalysisError::InvalidZipf("period must be at least 1".into()));
    }
    let q = 1.0 - success;
    let m = period as i32;
    // each row is geometric in the gap; dividing by the row sum equals
    // p / (1 - q^m) and keeps rows exactly stochastic
    let matrix = (1..=m)
        .map(|i| {
            let row: Vec<f64> = (1..=m)
                .map(|j| {
                    let gap = if i < j { j - i - 1 } else { m - i + j - 1 };
                    q.powi(gap)
                })
                .collect();
            let total: f64 = row.iter().sum();
            row.into_iter().map(|x| x / total).collect()
        })
        .collect();
    Ok(matrix)
}

/// Expected reward `h(j)` of a renewal cycle starting at position `j`,
/// counting subscribed views among the positions up to and including the
/// next received view, with no reward when the gap exceeds `range`.
pub fn periodic_zipf_cycle_reward(j: usize, params: &PeriodicZipfParams, range: u16) -> Result<f64, AnalysisError> {
    params.check_position(j)?;
    let p = params.success;
    let q = 1.0 - p;
    Ok((1..=usize::from(range))
        .map(|x| params.expected_subscribed_after(j, x) * p * q.powi(x as i32 - 1))
        .sum())
}

/// Expected reward of a cycle from position `j` whose gap exceeds `range`:
/// only the received view that ends it is obtained.
pub fn periodic_zipf_tail_reward(j: usize, params: &PeriodicZipfParams, range: u16) -> Result<f64, AnalysisError> {
    params.check_position(j)?;
    let p = params.success;
    let q = 1.0 - p;
    let m = params.period;
    let wrap = 1.0 - q.powi(m as i32);
    if wrap == 0.0 {
        return Ok(0.0);
    }
    let r = usize::from(range);
    let tail: f64 = (0..m)
        .map(|t| params.subscription_probability(params.advance(j, r + 1 + t)) * p * q.powi((r + t) as i32))
        .sum();
    Ok(tail / wrap)
}

/// Long-run acquisition ratio under periodic Zipf subscription:
/// `p * sum_j (h(j) + tail(j)) / sum_l c / l^s`, using the uniform stationary
/// distribution of the position chain.
pub fn asymptotic_alpha_periodic_zipf(params: &PeriodicZipfParams, range: u16) -> Result<AcquisitionRatio, AnalysisError> {
    if range < 1 {
        return Err(AnalysisError::ZeroRange);
    }
    if params.success == 0.0 {
        return Ok(AcquisitionRatio(0.0));
    }
    let mut reward = 0.0;
    for j in 1..=params.period {
        reward += periodic_zipf_cycle_reward(j, params, range)? + periodic_zipf_tail_reward(j, params, range)?;
    }
    Ok(AcquisitionRatio(settle(params.success * reward / params.period_mass())))
}

/// The same ratio with the truncated reward only (cycles longer than `range`
/// earn nothing). Systematically below the long-run ratio by the tail term.
pub fn asymptotic_alpha_periodic_zipf_truncated(
    params: &PeriodicZipfParams,
    range: u16,
) -> Result<AcquisitionRatio, AnalysisError> {
    if range < 1 {
        return Err(AnalysisError::ZeroRange);
    }
    if params.success == 0.0 {
        return Ok(AcquisitionRatio(0.0));
    }
    let mut reward = 0.0;
    for j in 1..=params.period {
        reward += periodic_zipf_cycle_reward(j, params, range)?;
    }
    Ok(AcquisitionRatio(settle(params.success * reward / params.period_mass())))
}

/// Literal evaluation of the piecewise closed form
/// `p * sum_j sum_{x<=R} [ sum_{l=1}^{m-j} c/(j+l)^s + W (x-(m-j))/m
///  + sum_{l=1}^{(x-(m-j)) mod m} c/l^s ] p (1-p)^{x-1} / W`
/// with real division and a non-negative modulus. Kept for comparison
/// reports only; it is not a probability in general and is not clamped.
pub fn periodic_zipf_piecewise_form(params: &PeriodicZipfParams, range: u16) -> f64 {
    let p = params.success;
    let q = 1.0 - p;
    let m = params.period as i64;
    let mass = params.period_mass();
    let mut total = 0.0;
    for j in 1..=m {
        for x in 1..=i64::from(range) {
            let head: f64 = (1..=m - j).map(|l| params.subscription_probability((j + l) as usize)).sum();
            let over = x - (m - j);
            let middle = mass * over as f64 / m as f64;
            let tail: f64 = (1..=over.rem_euclid(m)).map(|l| params.subscription_probability(l as usize)).sum();
            total += (head + middle + tail) * p * q.powi(x as i32 - 1);
        }
    }
    p * total / mass
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClientId, InstanceKey, LossTable, RateId};

    fn key(v: u16, c: u8, r: u8) -> InstanceKey {
        InstanceKey::new(ViewId::new(v).unwrap(), ChannelId(c), RateId(r))
    }

    fn v(i: u16) -> ViewId {
        ViewId::new(i).unwrap()
    }

    fn uniform_client(channels: u8, rates: u8, p: f64) -> (Client, LossModel) {
        let client = Client::new(
            ClientId(1),
            (0..channels).map(ChannelId),
            (0..rates).map(RateId),
            [v(1)],
            0.1,
        )
        .unwrap();
        let mut table = LossTable::new();
        for c in 0..channels {
            for r in 0..rates {
                table.insert(ClientId(1), ChannelId(c), RateId(r), p).unwrap();
            }
        }
        (client, LossModel::Table(table))
    }

    #[test]
    fn view_loss_cases() {
        let (client, model) = uniform_client(2, 1, 0.5);
        let empty = TransmissionPlan::new();
        assert_eq!(view_loss_probability(&client, v(1), &empty, &model).unwrap(), 1.0);
        let two = TransmissionPlan::new().with(key(1, 0, 0), 1).with(key(1, 1, 0), 1);
        assert_eq!(view_loss_probability(&client, v(1), &two, &model).unwrap(), 0.25);
        let (client, model) = uniform_client(1, 1, 0.3);
        let one = TransmissionPlan::new().with(key(1, 0, 0), 1);
        assert_eq!(view_loss_probability(&client, v(1), &one, &model).unwrap(), 0.3);
    }

    #[test]
    fn failure_basic_cases() {
        let (client, model) = uniform_client(1, 1, 0.0);
        let plan = TransmissionPlan::new().with(key(2, 0, 0), 1);
        assert_eq!(view_failure_probability(&client, v(2), &plan, &model, 3, 2).unwrap().value(), 0.0);

        let (client, model) = uniform_client(1, 1, 0.3);
        let plan = TransmissionPlan::new().with(key(1, 0, 0), 1).with(key(2, 0, 0), 1);
        let f = view_failure_probability(&client, v(1), &plan, &model, 3, 2).unwrap().value();
        assert!((f - 0.3).abs() < 1e-15);

        let (client, model) = uniform_client(1, 1, 0.5);
        let plan: TransmissionPlan = (1..=3).map(|j| (key(j, 0, 0), 1)).collect();
        let f = view_failure_probability(&client, v(2), &plan, &model, 3, 2).unwrap().value();
        assert!((f - 0.375).abs() < 1e-15);
    }

    #[test]
    fn failure_domain_errors() {
        let (client, model) = uniform_client(1, 1, 0.5);
        let plan = TransmissionPlan::new();
        assert_eq!(
            view_failure_probability(&client, v(1), &plan, &model, 1, 2),
            Err(AnalysisError::TooFewViews(1))
        );
        assert_eq!(view_failure_probability(&client, v(1), &plan, &model, 3, 0), Err(AnalysisError::ZeroRange));
        assert!(view_failure_probability(&client, v(4), &plan, &model, 3, 2).is_err());
        assert_eq!(
            view_failure_probability_single_radio(&client, ChannelId(3), v(1), &plan, &model, 3, 2),
            Err(AnalysisError::ChannelUnavailable(ChannelId(3)))
        );
    }

    #[test]
    fn single_radio_ignores_other_channels() {
        let (client, model) = uniform_client(2, 1, 0.2);
        let plan = TransmissionPlan::new().with(key(1, 1, 0), 3);
        let f = view_failure_probability_single_radio(&client, ChannelId(0), v(1), &plan, &model, 4, 2).unwrap();
        assert_eq!(f.value(), 1.0);
        let both = TransmissionPlan::new().with(key(1, 0, 0), 1).with(key(2, 0, 0), 1).with(key(3, 0, 0), 1);
        let a = view_failure_probability_single_radio(&client, ChannelId(0), v(2), &both, &model, 4, 2).unwrap();
        let b = view_failure_probability(&client, v(2), &both, &model, 4, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn log_space_matches_linear() {
        let losses = vec![0.3, 0.2, 0.5, 0.4, 0.9, 0.7];
        let linear = ViewLosses::from_values(losses.clone());
        let log = ViewLosses { views: 6, repr: LossRepr::Log(losses.iter().map(|p| p.ln()).collect()) };
        assert!(!linear.is_log_space());
        for k in 1..=6 {
            for r in 1..=4 {
                let a = linear.failure(v(k), r);
                let b = log.failure(v(k), r);
                assert!((a - b).abs() < 1e-14, "k={k} r={r}: {a} vs {b}");
            }
        }
        let tiny = ViewLosses::from_values(vec![1e-9, 1e-8, 1.0]);
        assert!(tiny.is_log_space());
        // view 2: direct loss 1e-8; synthesis impossible without view 3
        assert!((tiny.failure(v(2), 2) - 1e-8).abs() < 1e-20);
    }

    #[test]
    fn expected_alpha_mean_of_complements() {
        let client = Client::new(ClientId(1), [ChannelId(0)], [RateId(0)], [v(1), v(2)], 0.1).unwrap();
        let model = LossModel::Table(LossTable::new().with(ClientId(1), ChannelId(0), RateId(0), 0.5).unwrap());
        let plan: TransmissionPlan = (1..=3).map(|j| (key(j, 0, 0), 1)).collect();
        // P(1) = 0.5 (boundary), P(2) = 0.375
        let a = expected_alpha(&client, &plan, &model, 3, 2).unwrap().value();
        assert!((a - (0.5 + 0.625) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn aggregate_loss_cases() {
        let (client, model) = uniform_client(1, 1, 0.2);
        let never = ApTransmissionPolicy::new();
        assert_eq!(aggregate_loss_probability(&client, &never, &model).unwrap(), 1.0);
        let once = ApTransmissionPolicy::deterministic([((ChannelId(0), RateId(0)), 1)]);
        assert!((aggregate_loss_probability(&client, &once, &model).unwrap() - 0.2).abs() < 1e-15);
        let mixed = ApTransmissionPolicy::new().with(ChannelId(0), RateId(0), vec![0.0, 0.5, 0.5]).unwrap();
        assert!((aggregate_loss_probability(&client, &mixed, &model).unwrap() - 0.12).abs() < 1e-15);
    }

    #[test]
    fn asymptotic_alpha_values() {
        assert_eq!(asymptotic_alpha(0.0, 3).unwrap().value(), 1.0);
        for p in [0.1, 0.35, 0.8] {
            assert!((asymptotic_alpha(p, 1).unwrap().value() - (1.0 - p)).abs() < 1e-15);
        }
        assert!((asymptotic_alpha(0.2, 3).unwrap().value() - 0.9792).abs() < 1e-12);
        assert!(asymptotic_alpha(1.2, 3).is_err());
    }

    #[test]
    fn spaced_values() {
        assert_eq!(asymptotic_alpha_spaced(0.0, 3, 3).unwrap().value(), 1.0);
        let a = asymptotic_alpha_spaced(0.2, 3, 3).unwrap().value();
        assert!((a - 0.8 * 2.6 / 3.0).abs() < 1e-12);
        assert!(asymptotic_alpha_spaced(0.2, 3, 4).is_err());
        assert!(asymptotic_alpha_spaced(0.2, 3, 0).is_err());
    }

    #[test]
    fn transition_matrix_cases() {
        assert_eq!(periodic_zipf_transition_matrix(0.3, 1).unwrap(), vec![vec![1.0]]);
        let shift = periodic_zipf_transition_matrix(1.0, 4).unwrap();
        for (i, row) in shift.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                assert_eq!(x, if j == (i + 1) % 4 { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(periodic_zipf_transition_matrix(0.0, 3), Err(AnalysisError::ZeroSuccess));
    }

    #[test]
    fn transition_matrix_matches_geometric_wrap_sum() {
        // P(next position = j | i) = sum over gaps g >= 1 landing on j of p q^{g-1}
        let (p, m) = (0.5, 2usize);
        let matrix = periodic_zipf_transition_matrix(p, m).unwrap();
        for i in 1..=m {
            let mut row = vec![0.0; m];
            for g in 1..400 {
                row[(i - 1 + g) % m] += p * (1.0 - p).powi(g as i32 - 1);
            }
            for j in 0..m {
                assert!((matrix[i - 1][j] - row[j]).abs() < 1e-14);
            }
        }
        // explicit: from 1, gaps 1,3,5,... land on 2
        assert!((matrix[0][1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((matrix[0][0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_is_stationary() {
        let matrix = periodic_zipf_transition_matrix(0.37, 5).unwrap();
        for j in 0..5 {
            let col: f64 = (0..5).map(|i| matrix[i][j] / 5.0).sum();
            assert!((col - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn cycle_reward_special_cases() {
        // uniform subscription q: h = q * sum_x x p (1-p)^{x-1}
        let (q, p) = (0.4, 0.3);
        let params = PeriodicZipfParams::new(4, 0.0, q, p).unwrap();
        let expect: f64 = (1..=3).map(|x| q * x as f64 * p * (1.0 - p).powi(x - 1)).sum();
        for j in 1..=4 {
            assert!((periodic_zipf_cycle_reward(j, &params, 3).unwrap() - expect).abs() < 1e-15);
        }
        // R = 1: one step, next position only
        let params = PeriodicZipfParams::new(3, 1.0, 0.9, 0.5).unwrap();
        for j in 1..=3 {
            let next = params.advance(j, 1);
            let h = periodic_zipf_cycle_reward(j, &params, 1).unwrap();
            assert!((h - 0.5 * 0.9 / next as f64).abs() < 1e-15);
        }
        assert!(periodic_zipf_cycle_reward(0, &params, 1).is_err());
        assert!(periodic_zipf_cycle_reward(4, &params, 1).is_err());
    }

    #[test]
    fn periodic_zipf_reduces_to_uniform_result() {
        for p in [0.1, 0.45, 0.9] {
            for r in 1..=4 {
                let params = PeriodicZipfParams::new(1, 0.0, 1.0, p).unwrap();
                let a = asymptotic_alpha_periodic_zipf(&params, r).unwrap().value();
                let b = asymptotic_alpha(1.0 - p, r).unwrap().value();
                assert!((a - b).abs() < 1e-9, "p={p} r={r}: {a} vs {b}");
            }
        }
        let zero = PeriodicZipfParams::new(3, 1.0, 0.9, 0.0).unwrap();
        assert_eq!(asymptotic_alpha_periodic_zipf(&zero, 3).unwrap().value(), 0.0);
    }

    #[test]
    fn zipf_params_validation() {
        assert!(PeriodicZipfParams::new(3, 1.0, 1.2, 0.5).is_err());
        assert!(PeriodicZipfParams::new(0, 1.0, 0.5, 0.5).is_err());
        let params = PeriodicZipfParams::new(5, 1.0, 0.9, 0.5).unwrap();
        assert_eq!(params.position_of(1), 1);
        assert_eq!(params.position_of(5), 5);
        assert_eq!(params.position_of(6), 1);
        assert_eq!(params.advance(5, 1), 1);
        assert_eq!(params.advance(2, 13), 5);
    }
}
