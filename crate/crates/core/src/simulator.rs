//! Frame-level simulation of a dynamic client population served by MVGMP and
//! by the baseline scheme that multicasts every desired view.
//!
//! Both schemes see the same population: the MVGMP table evolves through
//! join/leave/expiry messages, while the baseline plan is a pure function of
//! the active clients and is rebuilt every frame.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, AnalysisError, ViewLosses};
use crate::exec::Execution;
use crate::model::{
    ApTransmissionPolicy, CellCapacity, ChannelId, Client, ClientId, DistanceRateModel, InstanceKey, LossModel,
    LossProfile, ModelError, Position, RateId, RateSet, TransmissionPlan, ViewId,
};
use crate::oracle::{self, OracleError, SequenceEstimate, SequenceReception, TransmissionInstances};
use crate::protocol::{
    self, Geometry, JoinMessage, LeaveMessage, Notice, ProtocolError, ViewTable,
};
use crate::rng::{Seed, SimRng};
use crate::stats::{binomial_consistent, binomial_z};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("scenario infeasible at initialization: {0}")]
    InitInfeasible(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preference {
    Uniform,
    /// Rank `k` with weight `1 / k^s`; rank `k` is view `k`.
    Zipf,
    /// Discretized normal density centered on `M / 2`.
    Normal,
}

/// How the baseline picks a rate for each desired view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineRule {
    /// Highest rate at which some repeat count within the cap satisfies every
    /// subscriber, with the smallest such count.
    HighestRate,
    /// The rate and repeat count with the least airtime.
    MinAirtime,
}

/// Distance-dependent loss: `p = 1 - (1 - base[r])^((d / d0)^gamma)`, clients
/// uniform in a disc around the AP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSettings {
    pub base: Vec<f64>,
    pub reference_distance: f64,
    pub exponent: f64,
    pub radius: f64,
}

impl Default for LossSettings {
    fn default() -> Self {
        LossSettings {
            base: vec![0.01, 0.02, 0.03, 0.05, 0.08, 0.12, 0.16, 0.2],
            reference_distance: 25.0,
            exponent: 2.0,
            radius: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub views: u16,
    pub range: u16,
    pub channels: u8,
    pub rates_mbps: Vec<f64>,
    /// Bits per second of one view.
    pub video_rate: f64,
    /// Seconds.
    pub frame_interval: f64,
    /// Clients joined before the first frame.
    pub population: usize,
    /// Per-frame probability of one arrival.
    pub arrival: f64,
    /// Per-frame probability of one departure.
    pub departure: f64,
    /// Per-frame probability of one view change.
    pub view_change: f64,
    pub preference: Preference,
    pub zipf_exponent: f64,
    pub normal_variance: f64,
    /// Thresholds are uniform on `(0, threshold_max]`.
    pub threshold_max: f64,
    pub frames: u64,
    /// Frames between soft-state refreshes.
    pub refresh_frames: u64,
    pub miss_limit: u32,
    /// At each refresh, a client that alone keeps some instance alive
    /// re-runs view selection and moves to instances others already
    /// receive when those meet its threshold.
    pub reselect_on_refresh: bool,
    pub max_protection_views: usize,
    pub baseline_rule: BaselineRule,
    pub baseline_repeat_cap: u32,
    /// Fraction of departures that send no Leave.
    pub silent_leave: f64,
    /// Reception trials per client in the end-of-run check.
    pub validation_trials: u64,
    pub loss: LossSettings,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            views: 16,
            range: 3,
            channels: CellCapacity::DEFAULT_CHANNELS,
            rates_mbps: RateSet::DOT11N_20MHZ.to_vec(),
            video_rate: CellCapacity::DEFAULT_VIDEO_RATE,
            frame_interval: CellCapacity::DEFAULT_FRAME_INTERVAL,
            population: 50,
            arrival: 0.2,
            departure: 0.3,
            view_change: 0.4,
            preference: Preference::Uniform,
            zipf_exponent: 1.0,
            normal_variance: 1.0,
            threshold_max: 0.1,
            frames: 300,
            refresh_frames: 20,
            miss_limit: 3,
            reselect_on_refresh: true,
            max_protection_views: Client::DEFAULT_MAX_PROTECTION_VIEWS,
            baseline_rule: BaselineRule::HighestRate,
            baseline_repeat_cap: 8,
            silent_leave: 0.0,
            validation_trials: 100_000,
            loss: LossSettings::default(),
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |msg: String| Err(SimulationError::InvalidConfig(msg));
        for (name, p) in [
            ("arrival", self.arrival),
            ("departure", self.departure),
            ("view_change", self.view_change),
            ("silent_leave", self.silent_leave),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if !(self.threshold_max > 0.0 && self.threshold_max <= 1.0) {
            return bad(format!("threshold_max = {} must lie in (0, 1]", self.threshold_max));
        }
        if self.channels == 0 {
            return bad("channels must be positive".into());
        }
        if self.refresh_frames == 0 {
            return bad("refresh_frames must be positive".into());
        }
        if self.baseline_repeat_cap == 0 {
            return bad("baseline_repeat_cap must be positive".into());
        }
        if !(self.frame_interval > 0.0 && self.video_rate > 0.0) {
            return bad("frame_interval and video_rate must be positive".into());
        }
        if !(self.zipf_exponent >= 0.0 && self.normal_variance > 0.0) {
            return bad("zipf_exponent must be non-negative and normal_variance positive".into());
        }
        if self.loss.base.len() != self.rates_mbps.len() {
            return bad(format!(
                "loss.base has {} entries for {} rates",
                self.loss.base.len(),
                self.rates_mbps.len()
            ));
        }
        if !(self.loss.radius >= 0.0) {
            return bad("loss.radius must be non-negative".into());
        }
        Geometry::new(self.views, self.range)?;
        RateSet::new(self.rates_mbps.clone())?;
        DistanceRateModel::new(self.loss.base.clone(), self.loss.reference_distance, self.loss.exponent)?;
        Ok(())
    }

    pub fn capacity(&self) -> Result<CellCapacity, SimulationError> {
        Ok(CellCapacity {
            channels: self.channels,
            rates: RateSet::new(self.rates_mbps.clone())?,
            frame_interval: self.frame_interval,
            video_rate: self.video_rate,
        })
    }

    pub fn geometry(&self) -> Result<Geometry, SimulationError> {
        Ok(Geometry::new(self.views, self.range)?)
    }

    pub fn loss_model(&self) -> Result<LossModel, SimulationError> {
        Ok(LossModel::DistanceRate(DistanceRateModel::new(
            self.loss.base.clone(),
            self.loss.reference_distance,
            self.loss.exponent,
        )?))
    }

    /// Loading ratio `λ / μ`.
    pub fn loading_ratio(&self) -> f64 {
        self.arrival / self.departure
    }
}

/// Summed airtime of a plan in milliseconds.
pub fn channel_time(plan: &TransmissionPlan, capacity: &CellCapacity) -> f64 {
    plan.iter()
        .filter_map(|(k, n)| {
            capacity
                .rates
                .bits_per_second(k.rate)
                .map(|bps| model_airtime(n, capacity, bps))
        })
        .sum::<f64>()
        * 1e3
}

fn model_airtime(n: u32, capacity: &CellCapacity, bps: f64) -> f64 {
    crate::model::airtime_seconds(n, capacity.video_rate, capacity.frame_interval, bps)
}

/// A client as the baseline sees it: desired view, threshold and loss per rate.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineDemand {
    pub view: ViewId,
    pub threshold: f64,
    /// Loss probability per rate id, `None` where the client cannot receive.
    pub loss: Vec<Option<f64>>,
}

impl BaselineDemand {
    pub fn from_client(client: &Client, profile: &LossProfile, rates: &RateSet) -> Self {
        let loss = rates
            .ids()
            .map(|r| {
                client
                    .channels()
                    .iter()
                    .filter_map(|&c| profile.get(c, r))
                    .fold(None, |acc: Option<f64>, p| Some(acc.map_or(p, |a| a.min(p))))
            })
            .collect();
        BaselineDemand { view: client.primary_view(), threshold: client.threshold(), loss }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselinePlan {
    pub plan: TransmissionPlan,
    /// Views whose subscribers cannot all be satisfied within the repeat cap.
    pub capped: Vec<ViewId>,
    /// Views that did not fit on any channel this frame.
    pub overflow: Vec<ViewId>,
}

/// Smallest `n ≤ cap` with `p^n ≤ threshold`.
fn repeats_needed(p: f64, threshold: f64, cap: u32) -> Option<u32> {
    if p <= threshold {
        return Some(1);
    }
    if p >= 1.0 {
        return None;
    }
    let n = (threshold.ln() / p.ln()).ceil().max(1.0);
    let mut n = n as u32;
    // guard against rounding in the logarithms
    while n > 1 && p.powi(n as i32 - 1) <= threshold {
        n -= 1;
    }
    while n <= cap && p.powi(n as i32) > threshold {
        n += 1;
    }
    (n <= cap).then_some(n)
}

/// The comparison scheme: every distinct desired view multicast on the
/// least-loaded channel, with the rate and repeat count chosen by `rule`
/// over all of the view's subscribers.
pub fn baseline_plan(
    demands: &[BaselineDemand],
    capacity: &CellCapacity,
    rule: BaselineRule,
    repeat_cap: u32,
) -> BaselinePlan {
    let mut by_view: BTreeMap<ViewId, Vec<&BaselineDemand>> = BTreeMap::new();
    for d in demands {
        by_view.entry(d.view).or_default().push(d);
    }
    let mut loads: Vec<f64> = vec![0.0; usize::from(capacity.channels)];
    let mut out = BaselinePlan { plan: TransmissionPlan::new(), capped: Vec::new(), overflow: Vec::new() };
    for (view, subs) in by_view {
        let options: Vec<(RateId, u32)> = capacity
            .rates
            .ids()
            .filter_map(|r| {
                let mut need = 1;
                for d in &subs {
                    let p = d.loss.get(usize::from(r.0)).copied().flatten()?;
                    need = need.max(repeats_needed(p, d.threshold, repeat_cap)?);
                }
                Some((r, need))
            })
            .collect();
        let chosen = match rule {
            BaselineRule::HighestRate => options.iter().max_by_key(|(r, _)| *r).copied(),
            BaselineRule::MinAirtime => options
                .iter()
                .min_by(|a, b| {
                    let ta = f64::from(a.1) * capacity.airtime(a.0);
                    let tb = f64::from(b.1) * capacity.airtime(b.0);
                    ta.total_cmp(&tb).then(b.0.cmp(&a.0))
                })
                .copied(),
        };
        let (rate, n) = match chosen {
            Some(c) => c,
            None => {
                log::debug!("baseline: view {view} capped at {repeat_cap} repeats");
                out.capped.push(view);
                (RateId(0), repeat_cap)
            }
        };
        let cost = f64::from(n) * capacity.airtime(rate);
        let slot = (0..loads.len())
            .filter(|&c| loads[c] + cost <= capacity.frame_interval * (1.0 + 1e-12))
            .min_by(|&a, &b| loads[a].total_cmp(&loads[b]).then(a.cmp(&b)));
        match slot {
            Some(c) => {
                loads[c] += cost;
                out.plan.set(InstanceKey::new(view, ChannelId(c as u8), rate), n);
            }
            None => out.overflow.push(view),
        }
    }
    out
}

/// Draws desired views from a preference distribution.
#[derive(Debug, Clone)]
pub struct PreferenceSampler {
    index: WeightedIndex<f64>,
    weights: Vec<f64>,
}

impl PreferenceSampler {
    pub fn new(preference: Preference, views: u16, zipf_exponent: f64, normal_variance: f64) -> Result<Self, SimulationError> {
        if views < 2 {
            return Err(AnalysisError::TooFewViews(views).into());
        }
        let mean = f64::from(views) / 2.0;
        let weights: Vec<f64> = (1..=views)
            .map(|k| {
                let k = f64::from(k);
                match preference {
                    Preference::Uniform => 1.0,
                    Preference::Zipf => k.powf(-zipf_exponent),
                    Preference::Normal => (-(k - mean).powi(2) / (2.0 * normal_variance)).exp(),
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.into_iter().map(|w| w / total).collect();
        let index = WeightedIndex::new(&weights)
            .map_err(|e| SimulationError::InvalidConfig(format!("preference weights: {e}")))?;
        Ok(PreferenceSampler { index, weights })
    }

    /// Probability of view `k` (index 0 is view 1).
    pub fn probabilities(&self) -> &[f64] {
        &self.weights
    }

    pub fn sample(&self, rng: &mut SimRng) -> ViewId {
        ViewId::new(self.index.sample(rng) as u16 + 1).expect("non-zero view index")
    }
}

pub fn sample_preference(
    preference: Preference,
    views: u16,
    rng: &mut SimRng,
) -> Result<ViewId, SimulationError> {
    Ok(PreferenceSampler::new(preference, views, 1.0, 1.0)?.sample(rng))
}

/// Per-frame metrics for both schemes.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub frame: u64,
    pub active_clients: usize,
    pub mvgmp_channel_time_ms: f64,
    pub baseline_channel_time_ms: f64,
    pub mvgmp_instances: usize,
    pub baseline_transmissions: u64,
    /// Mean and max closed-form failure probability of active MVGMP clients.
    pub mean_failure: f64,
    pub max_failure: f64,
    /// Clients flagged feasible whose failure exceeds their threshold.
    pub threshold_violations: usize,
    pub infeasible_clients: usize,
    /// Mean expected acquisition ratio, `1 - failure`, per scheme.
    pub mvgmp_mean_alpha: f64,
    pub baseline_mean_alpha: f64,
    pub baseline_capped_views: usize,
    pub baseline_overflow_views: usize,
    pub table_version: u64,
}

/// End-of-run reliability check of one client: its subscriptions frozen,
/// reception simulated repeatedly and compared with the closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientReport {
    pub client: ClientId,
    pub desired: ViewId,
    pub threshold: f64,
    pub distance: f64,
    pub feasible: bool,
    pub subscriptions: usize,
    pub predicted_failure: f64,
    pub simulated_failure: f64,
    pub failures: u64,
    pub trials: u64,
    /// Deviation in binomial standard errors of the predicted value.
    pub z_score: f64,
    /// Exact binomial test at the level of a 4-sigma deviation.
    pub consistent: bool,
}

pub const CONSISTENCY_SIGMAS: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSummary {
    pub seed: u64,
    pub frames: u64,
    pub mean_active_clients: f64,
    pub mvgmp_channel_time_ms: f64,
    pub baseline_channel_time_ms: f64,
    pub channel_time_ratio: f64,
    pub mvgmp_mean_alpha: f64,
    pub baseline_mean_alpha: f64,
    pub threshold_violations: usize,
    pub infeasible_frames: u64,
    /// Frames (with both plans feasible) where MVGMP used more airtime.
    pub frames_mvgmp_above_baseline: u64,
    /// Per-frame reception draws for every active client over the run.
    pub observed_failures: u64,
    pub expected_failures: f64,
    pub failure_variance: f64,
}

impl ScenarioSummary {
    /// Standardized deviation of observed from expected failures over the run.
    pub fn failure_z(&self) -> f64 {
        if self.failure_variance > 0.0 {
            (self.observed_failures as f64 - self.expected_failures) / self.failure_variance.sqrt()
        } else if (self.observed_failures as f64 - self.expected_failures).abs() < 1e-9 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutput {
    pub records: Vec<MetricsRecord>,
    pub summary: ScenarioSummary,
    pub clients: Vec<ClientReport>,
}

#[derive(Debug, Clone)]
struct ActiveClient {
    client: Client,
    profile: LossProfile,
    demand: BaselineDemand,
    joined_frame: u64,
    feasible: bool,
}

/// Live state of one run.
#[derive(Debug, Clone)]
pub struct SimulationState {
    config: ScenarioConfig,
    capacity: CellCapacity,
    geometry: Geometry,
    model: LossModel,
    preference: PreferenceSampler,
    table: ViewTable,
    active: BTreeMap<ClientId, ActiveClient>,
    next_client: u32,
    frame: u64,
}

/// Most reorganization rounds processed after a single leave.
const REORGANIZATION_LIMIT: usize = 10_000;

impl SimulationState {
    pub fn new(config: &ScenarioConfig) -> Result<Self, SimulationError> {
        config.validate()?;
        let capacity = config.capacity()?;
        Ok(SimulationState {
            capacity: capacity.clone(),
            geometry: config.geometry()?,
            model: config.loss_model()?,
            preference: PreferenceSampler::new(
                config.preference,
                config.views,
                config.zipf_exponent,
                config.normal_variance,
            )?,
            table: ViewTable::new(capacity),
            active: BTreeMap::new(),
            next_client: 1,
            frame: 0,
            config: config.clone(),
        })
    }

    pub fn table(&self) -> &ViewTable {
        &self.table
    }

    pub fn frame(&self) -> u64 {
        self.frame
    }

    pub fn population(&self) -> usize {
        self.active.len()
    }

    pub fn clients(&self) -> impl Iterator<Item = &Client> {
        self.active.values().map(|a| &a.client)
    }

    fn now(&self) -> f64 {
        self.frame as f64 * self.config.frame_interval
    }

    fn new_client(&mut self, rng: &mut SimRng) -> Result<ActiveClient, SimulationError> {
        let id = ClientId(self.next_client);
        self.next_client += 1;
        let radius = self.config.loss.radius * rng.random::<f64>().sqrt();
        let angle = 2.0 * PI * rng.random::<f64>();
        let threshold = self.config.threshold_max * (1.0 - rng.random::<f64>());
        let desired = self.preference.sample(rng);
        let client = Client::new(
            id,
            self.capacity.channel_ids(),
            self.capacity.rates.ids(),
            [desired],
            threshold,
        )?
        .with_position(Position { x: radius * angle.cos(), y: radius * angle.sin() })
        .with_max_protection_views(self.config.max_protection_views);
        let profile = LossProfile::build(&self.model, &client)?;
        let demand = BaselineDemand::from_client(&client, &profile, &self.capacity.rates);
        Ok(ActiveClient { client, profile, demand, joined_frame: self.frame, feasible: true })
    }

    /// Runs view selection for an active client and sends its Join.
    fn join(&mut self, id: ClientId) -> Result<bool, SimulationError> {
        let now = self.now();
        let entry = &self.active[&id];
        let selection = protocol::select_views_with_profile(
            &entry.client,
            &entry.profile,
            entry.client.primary_view(),
            &self.table,
            self.geometry,
        )?;
        let mut feasible = selection.feasible;
        let instances = selection.instances();
        if !instances.is_empty() {
            let outcome = self.table.handle_join(&JoinMessage { client: id, views: instances }, now)?;
            feasible &= outcome.rejected.is_empty();
        }
        if !feasible {
            log::debug!("client {id}: no selection meets threshold {}", entry.client.threshold());
        }
        self.active.get_mut(&id).expect("active client").feasible = feasible;
        Ok(!selection.direct.is_empty() || !selection.protection.is_empty())
    }

    /// Adds a client and joins. Returns whether it subscribed to anything.
    pub fn arrive(&mut self, rng: &mut SimRng) -> Result<bool, SimulationError> {
        let entry = self.new_client(rng)?;
        let id = entry.client.id();
        self.active.insert(id, entry);
        self.join(id)
    }

    fn leave_all(&mut self, id: ClientId) -> Result<(), SimulationError> {
        let subs = self.table.subscriptions_of(id);
        if subs.is_empty() {
            return Ok(());
        }
        let outcome = self.table.handle_leave(&LeaveMessage { client: id, views: subs })?;
        self.reorganize_after(outcome.notices)
    }

    /// Delivers leave notices, letting each recipient re-organize; the leaves
    /// this causes may notify further clients.
    fn reorganize_after(&mut self, notices: Vec<Notice>) -> Result<(), SimulationError> {
        let mut queue: std::collections::VecDeque<Notice> = notices.into();
        let mut rounds = 0;
        let now = self.now();
        while let Some(notice) = queue.pop_front() {
            rounds += 1;
            if rounds > REORGANIZATION_LIMIT {
                log::warn!("reorganization limit reached; {} notices dropped", queue.len() + 1);
                break;
            }
            let Some(entry) = self.active.get(&notice.recipient) else { continue };
            let Some(re) = protocol::reorganize_with_profile(
                &entry.client,
                &entry.profile,
                notice.instance,
                &self.table,
                self.geometry,
            ) else {
                continue;
            };
            if !re.leave.views.is_empty() {
                let outcome = self.table.handle_leave(&re.leave)?;
                queue.extend(outcome.notices);
            }
            if let Some(join) = re.join {
                self.table.handle_join(&join, now)?;
            }
        }
        Ok(())
    }

    /// Removes a uniformly chosen client; `silent` skips the Leave so soft
    /// state has to clean up.
    pub fn depart(&mut self, rng: &mut SimRng, silent: bool) -> Result<Option<ClientId>, SimulationError> {
        let Some(id) = self.pick(rng) else { return Ok(None) };
        if !silent {
            self.leave_all(id)?;
        }
        self.active.remove(&id);
        Ok(Some(id))
    }

    /// A uniformly chosen client resamples its desired view: Leave, then Join.
    pub fn change_view(&mut self, rng: &mut SimRng) -> Result<Option<ClientId>, SimulationError> {
        let Some(id) = self.pick(rng) else { return Ok(None) };
        let view = self.preference.sample(rng);
        self.leave_all(id)?;
        let entry = self.active.get_mut(&id).expect("active client");
        entry.client = entry.client.clone().with_desired([view])?;
        entry.demand.view = view;
        self.join(id)?;
        Ok(Some(id))
    }

    fn pick(&self, rng: &mut SimRng) -> Option<ClientId> {
        if self.active.is_empty() {
            return None;
        }
        let i = rng.random_range(0..self.active.len());
        self.active.keys().nth(i).copied()
    }

    /// Moves a client off instances only it receives when the instances
    /// other clients keep alive already meet its threshold. Returns whether
    /// the subscription changed (the Join sent doubles as the refresh).
    fn reselect(&mut self, id: ClientId) -> Result<bool, SimulationError> {
        let subs = self.table.subscriptions_of(id);
        if subs.iter().all(|k| self.table.subscriber_count(*k) > 1) {
            return Ok(false);
        }
        let mut others = self.table.clone();
        others.handle_leave(&LeaveMessage { client: id, views: subs.clone() })?;
        let entry = &self.active[&id];
        let selection = protocol::select_views_with_profile(
            &entry.client,
            &entry.profile,
            entry.client.primary_view(),
            &others,
            self.geometry,
        )?;
        if !selection.feasible {
            return Ok(false);
        }
        let keep = selection.instances();
        let drop: Vec<InstanceKey> = subs.iter().filter(|k| !keep.contains(k)).copied().collect();
        let airtime = |keys: &mut dyn Iterator<Item = &InstanceKey>| -> f64 {
            keys.map(|k| self.capacity.airtime(k.rate)).sum()
        };
        let freed = airtime(&mut drop.iter().filter(|k| self.table.subscriber_count(**k) == 1));
        let added = airtime(&mut selection.create.iter());
        if drop.is_empty() || added >= freed - 1e-12 {
            return Ok(false);
        }
        let now = self.now();
        let outcome = self.table.handle_leave(&LeaveMessage { client: id, views: drop })?;
        self.table.handle_join(&JoinMessage { client: id, views: keep }, now)?;
        self.active.get_mut(&id).expect("active client").feasible = true;
        self.reorganize_after(outcome.notices)?;
        Ok(true)
    }

    /// Active clients re-send their subscriptions every `refresh_frames`
    /// frames, then stale entries expire.
    fn maintain_soft_state(&mut self) -> Result<(), SimulationError> {
        let now = self.now();
        let period = self.config.refresh_frames;
        let due: Vec<ClientId> = self
            .active
            .values()
            .filter(|a| self.frame > a.joined_frame && (self.frame - a.joined_frame) % period == 0)
            .map(|a| a.client.id())
            .collect();
        for id in due {
            if self.config.reselect_on_refresh && self.reselect(id)? {
                continue;
            }
            let subs = self.table.subscriptions_of(id);
            if !subs.is_empty() {
                self.table.handle_join(&JoinMessage { client: id, views: subs }, now)?;
            }
        }
        let interval = period as f64 * self.config.frame_interval;
        self.table.expire_soft_state(now, interval, self.config.miss_limit);
        Ok(())
    }

    /// One frame of dynamics in the fixed order arrivals, departures, view
    /// changes, soft-state maintenance.
    pub fn step(&mut self, rng: &mut SimRng) -> Result<(), SimulationError> {
        self.frame += 1;
        let arrive = rng.random::<f64>() < self.config.arrival;
        let depart = rng.random::<f64>() < self.config.departure;
        let silent = rng.random::<f64>() < self.config.silent_leave;
        let change = rng.random::<f64>() < self.config.view_change;
        if arrive {
            self.arrive(rng)?;
        }
        if depart {
            self.depart(rng, silent)?;
        }
        if change {
            self.change_view(rng)?;
        }
        self.maintain_soft_state()
    }

    pub fn baseline(&self) -> BaselinePlan {
        let demands: Vec<BaselineDemand> = self.active.values().map(|a| a.demand.clone()).collect();
        baseline_plan(&demands, &self.capacity, self.config.baseline_rule, self.config.baseline_repeat_cap)
    }

    /// The MVGMP instances a client receives, as a plan.
    pub fn subscribed_plan(&self, id: ClientId) -> TransmissionPlan {
        self.table.subscriptions_of(id).into_iter().map(|k| (k, 1)).collect()
    }

    pub fn client_failure(&self, id: ClientId) -> Option<f64> {
        let entry = self.active.get(&id)?;
        let plan = self.subscribed_plan(id);
        Some(
            ViewLosses::from_plan(&entry.profile, &plan, self.config.views)
                .failure(entry.client.primary_view(), self.config.range)
                .clamp(0.0, 1.0),
        )
    }

    pub fn is_feasible(&self, id: ClientId) -> bool {
        self.active.get(&id).is_some_and(|a| a.feasible)
    }

    pub fn metrics(&self) -> (MetricsRecord, Vec<(ClientId, f64)>) {
        let baseline = self.baseline();
        let failures: Vec<(ClientId, f64)> =
            self.active.keys().map(|&id| (id, self.client_failure(id).expect("active"))).collect();
        let n = failures.len();
        let mean = |xs: &mut dyn Iterator<Item = f64>| if n == 0 { 0.0 } else { xs.sum::<f64>() / n as f64 };
        let violations = failures
            .iter()
            .filter(|(id, f)| {
                let a = &self.active[id];
                a.feasible && *f > a.client.threshold() + 1e-12
            })
            .count();
        let baseline_alpha = mean(&mut self.active.values().map(|a| {
            let loss = analysis::view_loss_with_profile(&a.profile, a.client.primary_view(), &baseline.plan);
            1.0 - loss
        }));
        let record = MetricsRecord {
            frame: self.frame,
            active_clients: n,
            mvgmp_channel_time_ms: channel_time(&self.table.implied_plan(), &self.capacity),
            baseline_channel_time_ms: channel_time(&baseline.plan, &self.capacity),
            mvgmp_instances: self.table.len(),
            baseline_transmissions: baseline.plan.total_transmissions(),
            mean_failure: mean(&mut failures.iter().map(|(_, f)| *f)),
            max_failure: failures.iter().map(|(_, f)| *f).fold(0.0, f64::max),
            threshold_violations: violations,
            infeasible_clients: self.active.values().filter(|a| !a.feasible).count(),
            mvgmp_mean_alpha: mean(&mut failures.iter().map(|(_, f)| 1.0 - f)),
            baseline_mean_alpha: baseline_alpha,
            baseline_capped_views: baseline.capped.len(),
            baseline_overflow_views: baseline.overflow.len(),
            table_version: self.table.version(),
        };
        (record, failures)
    }

    /// Freezes every active client's subscriptions and estimates its failure
    /// frequency over `trials` independent frames.
    pub fn validate_clients(&self, trials: u64, seed: Seed, execution: Execution) -> Vec<ClientReport> {
        let ids: Vec<ClientId> = self.active.keys().copied().collect();
        execution.map_slice(&ids, |&id| {
            let entry = &self.active[&id];
            let plan = self.subscribed_plan(id);
            let predicted = self.client_failure(id).expect("active");
            let instances = TransmissionInstances::new(&entry.profile, &plan, self.config.views);
            let desired = usize::from(entry.client.primary_view().index()) - 1;
            let mut rng = seed.child(u64::from(id.0)).rng();
            let mut received = vec![false; usize::from(self.config.views)];
            let mut failures = 0u64;
            for _ in 0..trials {
                instances.sample_views(&mut rng, &mut received);
                oracle::close_under_synthesis(&mut received, self.config.range);
                failures += u64::from(!received[desired]);
            }
            let freq = if trials == 0 { 0.0 } else { failures as f64 / trials as f64 };
            ClientReport {
                client: id,
                desired: entry.client.primary_view(),
                threshold: entry.client.threshold(),
                distance: entry.client.position().distance_to_ap(),
                feasible: entry.feasible,
                subscriptions: plan.len(),
                predicted_failure: predicted,
                simulated_failure: freq,
                failures,
                trials,
                z_score: binomial_z(failures, trials, predicted),
                consistent: binomial_consistent(failures, trials, predicted, CONSISTENCY_SIGMAS),
            }
        })
    }

    /// Draws one frame of reception for every active client; returns the
    /// number of failures and the predicted mean and variance of that count.
    fn draw_frame_reception(&self, failures: &[(ClientId, f64)], rng: &mut SimRng) -> (u64, f64, f64) {
        let mut observed = 0;
        let mut mean = 0.0;
        let mut var = 0.0;
        let mut received = vec![false; usize::from(self.config.views)];
        for &(id, p) in failures {
            let entry = &self.active[&id];
            let instances = TransmissionInstances::new(&entry.profile, &self.subscribed_plan(id), self.config.views);
            instances.sample_views(rng, &mut received);
            oracle::close_under_synthesis(&mut received, self.config.range);
            observed += u64::from(!received[usize::from(entry.client.primary_view().index()) - 1]);
            mean += p;
            var += p * (1.0 - p);
        }
        (observed, mean, var)
    }
}

/// Runs one seeded scenario: initial joins, then `frames` frames of dynamics
/// with metrics captured after each (frame 0 is the initial state).
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioOutput, SimulationError> {
    run_scenario_with(config, Execution::default())
}

pub fn run_scenario_with(config: &ScenarioConfig, execution: Execution) -> Result<ScenarioOutput, SimulationError> {
    let mut state = SimulationState::new(config)?;
    let root = Seed::new(config.seed);
    let mut rng = root.child(1).rng();
    let mut reception_rng = root.child(2).rng();

    for _ in 0..config.population {
        state.arrive(&mut rng)?;
        let id = *state.active.keys().next_back().expect("just added");
        if !state.is_feasible(id) && state.table.subscriptions_of(id).is_empty() {
            return Err(SimulationError::InitInfeasible(format!(
                "client {id} could not subscribe to any instance of view {} ({} instances in the table)",
                state.active[&id].client.primary_view(),
                state.table.len()
            )));
        }
    }

    let mut records = Vec::with_capacity(config.frames as usize + 1);
    let mut observed = 0;
    let mut expected = 0.0;
    let mut variance = 0.0;
    let mut infeasible_frames = 0;
    let mut above = 0;
    let mut capture = |state: &SimulationState, rng: &mut SimRng, records: &mut Vec<MetricsRecord>| {
        let (record, failures) = state.metrics();
        let (o, m, v) = state.draw_frame_reception(&failures, rng);
        observed += o;
        expected += m;
        variance += v;
        if record.infeasible_clients > 0 || record.threshold_violations > 0 {
            infeasible_frames += 1;
        }
        if record.baseline_overflow_views == 0
            && record.baseline_capped_views == 0
            && record.mvgmp_channel_time_ms > record.baseline_channel_time_ms + 1e-9
        {
            above += 1;
        }
        records.push(record);
    };
    capture(&state, &mut reception_rng, &mut records);
    for _ in 0..config.frames {
        state.step(&mut rng)?;
        capture(&state, &mut reception_rng, &mut records);
    }
    let clients = state.validate_clients(config.validation_trials, root.child(3), execution);

    let n = records.len() as f64;
    let avg = |f: fn(&MetricsRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    let mvgmp = avg(|r| r.mvgmp_channel_time_ms);
    let baseline = avg(|r| r.baseline_channel_time_ms);
    let summary = ScenarioSummary {
        seed: config.seed,
        frames: config.frames,
        mean_active_clients: avg(|r| r.active_clients as f64),
        mvgmp_channel_time_ms: mvgmp,
        baseline_channel_time_ms: baseline,
        channel_time_ratio: if baseline > 0.0 { mvgmp / baseline } else { f64::NAN },
        mvgmp_mean_alpha: avg(|r| r.mvgmp_mean_alpha),
        baseline_mean_alpha: avg(|r| r.baseline_mean_alpha),
        threshold_violations: records.iter().map(|r| r.threshold_violations).sum(),
        infeasible_frames,
        frames_mvgmp_above_baseline: above,
        observed_failures: observed,
        expected_failures: expected,
        failure_variance: variance,
    };
    Ok(ScenarioOutput { records, summary, clients })
}

/// Closed-form versus simulated acquisition ratio for one client receiving
/// every view the way the baseline sends its desired view.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaCheck {
    pub range: u16,
    /// Aggregate per-view loss probability under the policy.
    pub loss: f64,
    pub closed_form: f64,
    pub simulated: SequenceEstimate,
}

/// Builds the per-view transmission policy a client experiences from the
/// plan entries of `view`, then compares the long-run acquisition ratio with
/// the closed form for each range.
pub fn policy_alpha_check(
    profile: &LossProfile,
    plan: &TransmissionPlan,
    view: ViewId,
    ranges: &[u16],
    select: f64,
    length: u64,
    seed: Seed,
    execution: Execution,
) -> Result<Vec<AlphaCheck>, SimulationError> {
    let policy = ApTransmissionPolicy::deterministic(
        plan.view_entries(view).map(|(k, n)| ((k.channel, k.rate), n)),
    );
    let loss = analysis::aggregate_loss_with_profile(profile, &policy);
    ranges
        .iter()
        .enumerate()
        .map(|(i, &range)| {
            let closed_form = analysis::asymptotic_alpha(loss, range)?.value();
            let reception = SequenceReception::Policy { profile: profile.clone(), policy: policy.clone() };
            let simulated = oracle::simulate_view_sequence_alpha(
                &reception,
                range,
                oracle::Subscription::Uniform { select },
                length,
                seed.child(i as u64),
                execution,
            )?;
            Ok(AlphaCheck { range, loss, closed_form, simulated })
        })
        .collect()
}
