//! Ground truth for the closed forms: exhaustive enumeration of loss outcomes
//! and seeded Monte Carlo erasure simulation with view synthesis.

use std::collections::BTreeSet;

use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::exec::Execution;
use crate::model::{
    ApTransmissionPolicy, Client, InstanceKey, LossModel, LossProfile, ModelError,
    TransmissionPlan, ViewId,
};
use crate::rng::{Seed, SimRng};
use crate::stats::{Estimate, RunningStats};

/// Largest number of transmission instances [`enumerate_failure_probability`]
/// will expand (`2^24` outcomes).
pub const ENUMERATION_CAP: usize = 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{count} transmissions would need 2^{count} outcomes (cap 2^{cap})")]
    TooManyTransmissions { count: usize, cap: usize },
    #[error("sequence length {0} too short")]
    SequenceTooShort(u64),
    #[error("trial count must be positive")]
    NoTrials,
    #[error("invalid subscription: {0}")]
    InvalidSubscription(String),
}

/// One successful transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Delivery {
    pub instance: InstanceKey,
    /// Which of the `n` repeats on this instance got through.
    pub repeat: u32,
}

/// The successes of one frame's transmissions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReceptionOutcome {
    pub deliveries: Vec<Delivery>,
}

impl ReceptionOutcome {
    pub fn views(&self) -> BTreeSet<ViewId> {
        self.deliveries.iter().map(|d| d.instance.view).collect()
    }
}

/// Individual transmission attempts a client can hear, with their loss
/// probabilities.
#[derive(Debug, Clone)]
pub struct TransmissionInstances {
    views: u16,
    attempts: Vec<(InstanceKey, u32, f64)>,
}

impl TransmissionInstances {
    pub fn new(profile: &LossProfile, plan: &TransmissionPlan, views: u16) -> Self {
        let attempts = plan
            .iter()
            .filter(|(k, _)| k.view.index() >= 1 && k.view.index() <= views)
            .filter_map(|(k, n)| profile.get(k.channel, k.rate).map(|p| (k, n, p)))
            .flat_map(|(k, n, p)| (0..n).map(move |i| (k, i, p)))
            .collect();
        TransmissionInstances { views, attempts }
    }

    pub fn len(&self) -> usize {
        self.attempts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attempts.is_empty()
    }

    /// Draws which attempts succeed.
    pub fn sample(&self, rng: &mut SimRng) -> ReceptionOutcome {
        let deliveries = self
            .attempts
            .iter()
            .filter(|(_, _, p)| rng.random::<f64>() >= *p)
            .map(|&(instance, repeat, _)| Delivery { instance, repeat })
            .collect();
        ReceptionOutcome { deliveries }
    }

    /// Draws a reception indicator per view (index 0 is view 1).
    pub fn sample_views(&self, rng: &mut SimRng, received: &mut [bool]) {
        received.iter_mut().for_each(|r| *r = false);
        for &(key, _, p) in &self.attempts {
            // one uniform per attempt, even for already received views, so
            // the stream does not depend on earlier outcomes
            let ok = rng.random::<f64>() >= p;
            if ok {
                received[usize::from(key.view.index()) - 1] = true;
            }
        }
        debug_assert_eq!(received.len(), usize::from(self.views));
    }
}

/// True when `desired` is received or lies strictly between two received
/// views at most `range` apart. Brute-force pair search.
fn obtainable_by_pairs(received: &[bool], desired: usize, range: usize) -> bool {
    if received[desired] {
        return true;
    }
    let lo = desired.saturating_sub(range);
    for a in lo..desired {
        if !received[a] {
            continue;
        }
        for b in desired + 1..received.len().min(a + range + 1) {
            if received[b] {
                return true;
            }
        }
    }
    false
}

/// Exact failure probability by summing over every success/loss pattern of
/// the individual transmissions.
pub fn enumerate_failure_probability(
    client: &Client,
    desired: ViewId,
    plan: &TransmissionPlan,
    model: &LossModel,
    views: u16,
    range: u16,
) -> Result<f64, OracleError> {
    if views < 2 {
        return Err(AnalysisError::TooFewViews(views).into());
    }
    if range < 1 {
        return Err(AnalysisError::ZeroRange.into());
    }
    if desired.index() > views {
        return Err(AnalysisError::ViewOutOfRange { view: desired.index(), views }.into());
    }
    let profile = LossProfile::build(model, client)?;
    let instances = TransmissionInstances::new(&profile, plan, views);
    enumerate_instances(&instances, desired, range)
}

/// Enumeration over pre-expanded transmission attempts.
pub fn enumerate_instances(instances: &TransmissionInstances, desired: ViewId, range: u16) -> Result<f64, OracleError> {
    let count = instances.len();
    if count > ENUMERATION_CAP {
        return Err(OracleError::TooManyTransmissions { count, cap: ENUMERATION_CAP });
    }
    let views = usize::from(instances.views);
    let target = usize::from(desired.index()) - 1;
    let mut received = vec![false; views];
    let mut failure = 0.0;
    for mask in 0u32..(1u32 << count) {
        received.iter_mut().for_each(|r| *r = false);
        let mut prob = 1.0;
        for (bit, &(key, _, p)) in instances.attempts.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                prob *= 1.0 - p;
                received[usize::from(key.view.index()) - 1] = true;
            } else {
                prob *= p;
            }
        }
        if !obtainable_by_pairs(&received, target, usize::from(range)) {
            failure += prob;
        }
    }
    Ok(failure)
}

/// Samples which views a client receives in one frame.
pub fn simulate_reception(
    plan: &TransmissionPlan,
    client: &Client,
    model: &LossModel,
    views: u16,
    rng: &mut SimRng,
) -> Result<BTreeSet<ViewId>, OracleError> {
    let profile = LossProfile::build(model, client)?;
    Ok(TransmissionInstances::new(&profile, plan, views).sample(rng).views())
}

/// Marks every view synthesizable from `received` (index 0 is view 1): views
/// strictly between two consecutive received views at most `range` apart.
pub fn close_under_synthesis(received: &mut [bool], range: u16) {
    let range = usize::from(range);
    let mut last: Option<usize> = None;
    for b in 0..received.len() {
        if !received[b] {
            continue;
        }
        if let Some(a) = last {
            if b - a <= range {
                received[a + 1..b].iter_mut().for_each(|r| *r = true);
            }
        }
        last = Some(b);
    }
}

/// Views a client obtains from `received` by direct reception or synthesis.
pub fn recoverable_views(received: &BTreeSet<ViewId>, views: u16, range: u16) -> BTreeSet<ViewId> {
    let mut flags = vec![false; usize::from(views)];
    for v in received {
        if let Some(slot) = flags.get_mut(usize::from(v.index()).wrapping_sub(1)) {
            *slot = true;
        }
    }
    close_under_synthesis(&mut flags, range);
    flags
        .iter()
        .enumerate()
        .filter(|(_, &r)| r)
        .map(|(i, _)| ViewId::new(i as u16 + 1).expect("non-zero"))
        .collect()
}

/// How many times the AP sends each view: fixed, or random per view.
#[derive(Debug, Clone, Copy)]
pub enum TransmissionSource<'a> {
    Plan(&'a TransmissionPlan),
    Policy(&'a ApTransmissionPolicy),
}

#[derive(Debug, Clone, Copy)]
pub struct MonteCarloConfig {
    pub trials: u64,
    pub seed: Seed,
    pub batch_size: u64,
    pub execution: Execution,
}

impl MonteCarloConfig {
    pub fn new(trials: u64, seed: Seed) -> Self {
        MonteCarloConfig { trials, seed, batch_size: 20_000, execution: Execution::default() }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    fn batches(&self) -> Vec<(u64, u64)> {
        let size = self.batch_size.max(1);
        let count = self.trials.div_ceil(size);
        (0..count).map(|b| (b, size.min(self.trials - b * size))).collect()
    }
}

/// Policy sampler: per `(channel, rate)` the client hears, the loss
/// probability and a count distribution.
struct PolicySampler {
    entries: Vec<(f64, WeightedIndex<f64>)>,
}

impl PolicySampler {
    fn new(profile: &LossProfile, policy: &ApTransmissionPolicy) -> Self {
        let entries = profile
            .iter()
            .filter_map(|((c, r), p)| {
                policy.distribution(c, r).map(|d| (p, WeightedIndex::new(d).expect("validated distribution")))
            })
            .collect();
        PolicySampler { entries }
    }

    /// Whether one view sent under the policy gets through.
    fn view_received(&self, rng: &mut SimRng) -> bool {
        let mut got = false;
        for (p, counts) in &self.entries {
            let n = counts.sample(rng);
            for _ in 0..n {
                got |= rng.random::<f64>() >= *p;
            }
        }
        got
    }
}

/// Estimates the client's expected acquisition ratio over its desired views.
/// The estimate's `ci95()` is the 95% half-width.
pub fn monte_carlo_alpha(
    client: &Client,
    source: TransmissionSource<'_>,
    model: &LossModel,
    views: u16,
    range: u16,
    config: MonteCarloConfig,
) -> Result<Estimate, OracleError> {
    if config.trials == 0 {
        return Err(OracleError::NoTrials);
    }
    if views < 2 {
        return Err(AnalysisError::TooFewViews(views).into());
    }
    let desired: Vec<usize> = client
        .desired_views()
        .iter()
        .map(|v| {
            if v.index() > views {
                Err(AnalysisError::ViewOutOfRange { view: v.index(), views })
            } else {
                Ok(usize::from(v.index()) - 1)
            }
        })
        .collect::<Result<_, _>>()?;
    let profile = LossProfile::build(model, client)?;
    let fixed = match source {
        TransmissionSource::Plan(plan) => Some(TransmissionInstances::new(&profile, plan, views)),
        TransmissionSource::Policy(_) => None,
    };
    let random = match source {
        TransmissionSource::Policy(policy) => Some(PolicySampler::new(&profile, policy)),
        TransmissionSource::Plan(_) => None,
    };

    let batches = config.batches();
    let per_batch = config.execution.map_slice(&batches, |&(index, trials)| {
        let mut rng = config.seed.child(index).rng();
        let mut received = vec![false; usize::from(views)];
        let mut stats = RunningStats::new();
        for _ in 0..trials {
            if let Some(instances) = &fixed {
                instances.sample_views(&mut rng, &mut received);
            } else if let Some(sampler) = &random {
                for slot in received.iter_mut() {
                    *slot = sampler.view_received(&mut rng);
                }
            }
            close_under_synthesis(&mut received, range);
            let got = desired.iter().filter(|&&k| received[k]).count();
            stats.push(got as f64 / desired.len() as f64);
        }
        stats
    });
    let mut total = RunningStats::new();
    for s in &per_batch {
        total.merge(s);
    }
    Ok(Estimate::from_stats(&total))
}

/// Per-view reception in a long view sequence.
#[derive(Debug, Clone)]
pub enum SequenceReception {
    /// Every view lost independently with this probability.
    Loss(f64),
    /// Transmission counts drawn per view from an AP policy.
    Policy { profile: LossProfile, policy: ApTransmissionPolicy },
}

/// Which views of the sequence the client subscribes to (and, for the spaced
/// mode, which ones the AP sends).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Subscription {
    Uniform { select: f64 },
    /// View `k` subscribed with probability `scale / pos(k)^exponent`.
    PeriodicZipf { period: usize, exponent: f64, scale: f64 },
    /// Only views `1, 1 + spacing, 1 + 2 spacing, ...` are transmitted.
    Spaced { spacing: u16, select: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceEstimate {
    pub alpha: f64,
    pub subscribed: u64,
    pub acquired: u64,
    /// Batch-means standard error over contiguous blocks.
    pub std_error: f64,
}

pub const MIN_SEQUENCE_LENGTH: u64 = 100_000;
const SEQUENCE_CHUNK: u64 = 65_536;
const SEQUENCE_BLOCKS: u64 = 100;

/// Simulates one long view sequence: reception, subscription marks, synthesis
/// closure, and the acquired/subscribed ratio.
pub fn simulate_view_sequence_alpha(
    reception: &SequenceReception,
    range: u16,
    subscription: Subscription,
    length: u64,
    seed: Seed,
    execution: Execution,
) -> Result<SequenceEstimate, OracleError> {
    if length < MIN_SEQUENCE_LENGTH {
        return Err(OracleError::SequenceTooShort(length));
    }
    if range < 1 {
        return Err(AnalysisError::ZeroRange.into());
    }
    match subscription {
        Subscription::Uniform { select } | Subscription::Spaced { select, .. } if !(0.0..=1.0).contains(&select) => {
            return Err(OracleError::InvalidSubscription(format!("selection probability {select}")));
        }
        Subscription::Spaced { spacing: 0, .. } => {
            return Err(OracleError::InvalidSubscription("spacing must be positive".into()));
        }
        Subscription::PeriodicZipf { period: 0, .. } => {
            return Err(OracleError::InvalidSubscription("period must be positive".into()));
        }
        _ => {}
    }
    if let SequenceReception::Loss(p) = reception {
        if !(0.0..=1.0).contains(p) {
            return Err(AnalysisError::InvalidProbability(*p).into());
        }
    }
    let sampler = match reception {
        SequenceReception::Policy { profile, policy } => Some(PolicySampler::new(profile, policy)),
        SequenceReception::Loss(_) => None,
    };

    let chunks: Vec<u64> = (0..length.div_ceil(SEQUENCE_CHUNK)).collect();
    let parts = execution.map_slice(&chunks, |&chunk| {
        let start = chunk * SEQUENCE_CHUNK;
        let end = (start + SEQUENCE_CHUNK).min(length);
        let mut rng = seed.child(chunk).rng();
        let mut received = Vec::with_capacity((end - start) as usize);
        let mut subscribed = Vec::with_capacity((end - start) as usize);
        for index in start..end {
            let view = index + 1;
            let sent = match subscription {
                Subscription::Spaced { spacing, .. } => (view - 1) % u64::from(spacing) == 0,
                _ => true,
            };
            let got = match (&sampler, reception) {
                (Some(s), _) => s.view_received(&mut rng),
                (None, SequenceReception::Loss(p)) => rng.random::<f64>() >= *p,
                (None, SequenceReception::Policy { .. }) => unreachable!(),
            };
            received.push(sent && got);
            let select = match subscription {
                Subscription::Uniform { select } | Subscription::Spaced { select, .. } => select,
                Subscription::PeriodicZipf { period, exponent, scale } => {
                    let pos = ((view - 1) % period as u64) as f64 + 1.0;
                    scale / pos.powf(exponent)
                }
            };
            subscribed.push(rng.random::<f64>() < select);
        }
        (received, subscribed)
    });

    let mut received = Vec::with_capacity(length as usize);
    let mut subscribed = Vec::with_capacity(length as usize);
    for (r, s) in parts {
        received.extend(r);
        subscribed.extend(s);
    }
    close_under_synthesis(&mut received, range);

    let block = (length / SEQUENCE_BLOCKS).max(1) as usize;
    let mut block_ratios = RunningStats::new();
    let (mut total_sub, mut total_acq) = (0u64, 0u64);
    for (r, s) in received.chunks(block).zip(subscribed.chunks(block)) {
        let sub = s.iter().filter(|&&x| x).count() as u64;
        let acq = r.iter().zip(s).filter(|(&r, &s)| r && s).count() as u64;
        total_sub += sub;
        total_acq += acq;
        if sub > 0 {
            block_ratios.push(acq as f64 / sub as f64);
        }
    }
    let alpha = if total_sub == 0 { 0.0 } else { total_acq as f64 / total_sub as f64 };
    Ok(SequenceEstimate { alpha, subscribed: total_sub, acquired: total_acq, std_error: block_ratios.std_error() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis;
    use crate::model::{ChannelId, ClientId, LossTable, RateId};

    fn v(i: u16) -> ViewId {
        ViewId::new(i).unwrap()
    }

    fn key(view: u16, c: u8, r: u8) -> InstanceKey {
        InstanceKey::new(v(view), ChannelId(c), RateId(r))
    }

    fn client_with(p: f64) -> (Client, LossModel) {
        let client = Client::new(ClientId(9), [ChannelId(0)], [RateId(0)], [v(2)], 0.1).unwrap();
        let model = LossModel::Table(LossTable::new().with(ClientId(9), ChannelId(0), RateId(0), p).unwrap());
        (client, model)
    }

    #[test]
    fn enumeration_hand_values() {
        let (client, model) = client_with(0.0);
        let plan = TransmissionPlan::new().with(key(2, 0, 0), 1);
        assert_eq!(enumerate_failure_probability(&client, v(2), &plan, &model, 3, 2).unwrap(), 0.0);

        let (client, model) = client_with(0.5);
        let plan: TransmissionPlan = (1..=3).map(|j| (key(j, 0, 0), 1)).collect();
        let f = enumerate_failure_probability(&client, v(2), &plan, &model, 3, 2).unwrap();
        assert_eq!(f, 3.0 / 8.0);
    }

    #[test]
    fn enumeration_cap() {
        let (client, model) = client_with(0.5);
        let plan = TransmissionPlan::new().with(key(1, 0, 0), 25);
        assert_eq!(
            enumerate_failure_probability(&client, v(1), &plan, &model, 3, 2),
            Err(OracleError::TooManyTransmissions { count: 25, cap: ENUMERATION_CAP })
        );
    }

    #[test]
    fn recoverable_examples() {
        let got: BTreeSet<_> = [v(1), v(4)].into();
        assert_eq!(recoverable_views(&got, 6, 3), [v(1), v(2), v(3), v(4)].into());
        assert_eq!(recoverable_views(&got, 6, 2), got);
        assert!(recoverable_views(&BTreeSet::new(), 6, 3).is_empty());
    }

    #[test]
    fn closure_matches_pair_definition() {
        // every subset of 7 views, several ranges
        for mask in 0u32..128 {
            let received: Vec<bool> = (0..7).map(|i| mask & (1 << i) != 0).collect();
            for range in 1..=4 {
                let mut closed = received.clone();
                close_under_synthesis(&mut closed, range);
                for k in 0..7 {
                    assert_eq!(closed[k], obtainable_by_pairs(&received, k, usize::from(range)));
                }
            }
        }
    }

    #[test]
    fn reception_extremes() {
        let plan: TransmissionPlan = (1..=3).map(|j| (key(j, 0, 0), 2)).collect();
        let mut rng = Seed::new(1).rng();
        let (client, model) = client_with(1.0);
        assert!(simulate_reception(&plan, &client, &model, 4, &mut rng).unwrap().is_empty());
        let (client, model) = client_with(0.0);
        assert_eq!(simulate_reception(&plan, &client, &model, 4, &mut rng).unwrap(), [v(1), v(2), v(3)].into());
    }

    #[test]
    fn reception_frequency_binomial() {
        // n = 2 repeats at p = 0.5: P(received) = 0.75
        let (client, model) = client_with(0.5);
        let plan = TransmissionPlan::new().with(key(1, 0, 0), 2).with(key(3, 0, 0), 1);
        let profile = LossProfile::build(&model, &client).unwrap();
        let instances = TransmissionInstances::new(&profile, &plan, 3);
        let mut rng = Seed::new(5).rng();
        let trials = 1_000_000u32;
        let mut flags = vec![false; 3];
        let (mut hit1, mut hit3) = (0u32, 0u32);
        for _ in 0..trials {
            instances.sample_views(&mut rng, &mut flags);
            hit1 += u32::from(flags[0]);
            hit3 += u32::from(flags[2]);
        }
        for (hits, p) in [(hit1, 0.75), (hit3, 0.5)] {
            let sigma = (p * (1.0 - p) / f64::from(trials)).sqrt();
            assert!((f64::from(hits) / f64::from(trials) - p).abs() < 4.0 * sigma);
        }
    }

    #[test]
    fn monte_carlo_degenerate_cases() {
        let (client, model) = client_with(0.0);
        let plan: TransmissionPlan = (1..=3).map(|j| (key(j, 0, 0), 1)).collect();
        let cfg = MonteCarloConfig::new(1000, Seed::new(3));
        let est = monte_carlo_alpha(&client, TransmissionSource::Plan(&plan), &model, 3, 2, cfg).unwrap();
        assert_eq!((est.mean, est.ci95()), (1.0, 0.0));
        let est =
            monte_carlo_alpha(&client, TransmissionSource::Plan(&TransmissionPlan::new()), &model, 3, 2, cfg).unwrap();
        assert_eq!((est.mean, est.ci95()), (0.0, 0.0));
    }

    #[test]
    fn monte_carlo_brackets_enumeration() {
        let (client, model) = client_with(0.5);
        let plan: TransmissionPlan = (1..=3).map(|j| (key(j, 0, 0), 1)).collect();
        let cfg = MonteCarloConfig::new(1_000_000, Seed::new(11));
        let est = monte_carlo_alpha(&client, TransmissionSource::Plan(&plan), &model, 3, 2, cfg).unwrap();
        assert!(est.brackets(1.0 - 0.375, 4.0), "{est:?}");
    }

    #[test]
    fn monte_carlo_is_schedule_independent() {
        let (client, model) = client_with(0.4);
        let plan: TransmissionPlan = (1..=3).map(|j| (key(j, 0, 0), 1)).collect();
        let cfg = MonteCarloConfig::new(50_000, Seed::new(2));
        let a = monte_carlo_alpha(&client, TransmissionSource::Plan(&plan), &model, 3, 2, cfg.with_execution(Execution::Sequential)).unwrap();
        let b = monte_carlo_alpha(&client, TransmissionSource::Plan(&plan), &model, 3, 2, cfg.with_execution(Execution::Parallel)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sequence_lossless_is_one() {
        let est = simulate_view_sequence_alpha(
            &SequenceReception::Loss(0.0),
            3,
            Subscription::Uniform { select: 0.8 },
            MIN_SEQUENCE_LENGTH,
            Seed::new(1),
            Execution::default(),
        )
        .unwrap();
        assert_eq!(est.alpha, 1.0);
    }

    #[test]
    fn sequence_matches_uniform_closed_form() {
        let est = simulate_view_sequence_alpha(
            &SequenceReception::Loss(0.2),
            3,
            Subscription::Uniform { select: 0.8 },
            1_000_000,
            Seed::new(8),
            Execution::default(),
        )
        .unwrap();
        let closed = analysis::asymptotic_alpha(0.2, 3).unwrap().value();
        assert!((est.alpha - closed).abs() < 5e-3, "{} vs {closed}", est.alpha);
    }

    #[test]
    fn sequence_rejects_short_runs() {
        let err = simulate_view_sequence_alpha(
            &SequenceReception::Loss(0.2),
            3,
            Subscription::Uniform { select: 0.8 },
            10,
            Seed::new(8),
            Execution::default(),
        );
        assert_eq!(err, Err(OracleError::SequenceTooShort(10)));
    }
}
