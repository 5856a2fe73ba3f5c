//! Core domain types: views, channels, rates, clients, loss models and
//! transmission plans.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("a video needs at least two views, got {0}")]
    TooFewViews(u16),
    #[error("view index must be at least 1")]
    ZeroView,
    #[error("view {view} is outside 1..={views}")]
    ViewOutOfRange { view: u16, views: u16 },
    #[error("rate set must be non-empty with positive, strictly increasing rates")]
    InvalidRateSet,
    #[error("client {0} has no available channel")]
    NoChannels(ClientId),
    #[error("client {0} has no available rate")]
    NoRates(ClientId),
    #[error("client {0} has no desired view")]
    NoDesiredViews(ClientId),
    #[error("threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("no loss entry for client {client}, channel {channel}, rate {rate}")]
    MissingLossEntry { client: ClientId, channel: ChannelId, rate: RateId },
    #[error("channel {channel} / rate {rate} not available to client {client}")]
    Unavailable { client: ClientId, channel: ChannelId, rate: RateId },
    #[error("distance-rate model needs one base loss per rate ({expected}), got {got}")]
    BaseLossCount { expected: usize, got: usize },
    #[error("invalid distance-rate parameters: {0}")]
    InvalidDistanceModel(String),
    #[error("transmission distribution for channel {channel}, rate {rate} sums to {sum}")]
    MalformedDistribution { channel: ChannelId, rate: RateId, sum: f64 },
    #[error("channel {channel} exceeds the cell's {channels} channels")]
    ChannelOutOfRange { channel: ChannelId, channels: u8 },
    #[error("rate {0} is not in the rate set")]
    RateOutOfRange(RateId),
}

/// A view index in `1..=M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ViewId(u16);

impl ViewId {
    pub fn new(index: u16) -> Result<Self, ModelError> {
        if index == 0 {
            return Err(ModelError::ZeroView);
        }
        Ok(ViewId(index))
    }

    pub const fn index(self) -> u16 {
        self.0
    }

    /// Absolute index distance between two views.
    pub fn distance(self, other: ViewId) -> u16 {
        self.0.abs_diff(other.0)
    }
}

impl fmt::Display for ViewId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// The set of views `1..=M` of one video.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewSpace {
    views: u16,
}

impl ViewSpace {
    /// `M = 1` is rejected: the boundary cases of the failure formula would
    /// coincide.
    pub fn new(views: u16) -> Result<Self, ModelError> {
        if views < 2 {
            return Err(ModelError::TooFewViews(views));
        }
        Ok(ViewSpace { views })
    }

    pub const fn len(self) -> u16 {
        self.views
    }

    pub const fn is_empty(self) -> bool {
        false
    }

    pub fn view(self, index: u16) -> Result<ViewId, ModelError> {
        if index == 0 {
            return Err(ModelError::ZeroView);
        }
        if index > self.views {
            return Err(ModelError::ViewOutOfRange { view: index, views: self.views });
        }
        Ok(ViewId(index))
    }

    pub fn contains(self, view: ViewId) -> bool {
        view.0 >= 1 && view.0 <= self.views
    }

    pub fn iter(self) -> impl Iterator<Item = ViewId> {
        (1..=self.views).map(ViewId)
    }
}

/// Index into the cell's list of orthogonal channels (zero based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChannelId(pub u8);

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ch{}", self.0)
    }
}

/// Index into a [`RateSet`] (zero is the lowest rate).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RateId(pub u8);

impl fmt::Display for RateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// PHY rates in Mbps, strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSet {
    mbps: Vec<f64>,
}

impl RateSet {
    /// 802.11n single-stream rates for a 20 MHz channel.
    pub const DOT11N_20MHZ: [f64; 8] = [6.5, 13.0, 19.5, 26.0, 39.0, 52.0, 58.5, 65.0];

    pub fn new(mbps: Vec<f64>) -> Result<Self, ModelError> {
        if mbps.is_empty()
            || mbps.len() > usize::from(u8::MAX)
            || mbps.iter().any(|r| !(r.is_finite() && *r > 0.0))
            || mbps.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(ModelError::InvalidRateSet);
        }
        Ok(RateSet { mbps })
    }

    pub fn dot11n() -> Self {
        RateSet { mbps: Self::DOT11N_20MHZ.to_vec() }
    }

    pub fn len(&self) -> usize {
        self.mbps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mbps.is_empty()
    }

    pub fn mbps(&self, rate: RateId) -> Option<f64> {
        self.mbps.get(usize::from(rate.0)).copied()
    }

    pub fn bits_per_second(&self, rate: RateId) -> Option<f64> {
        self.mbps(rate).map(|r| r * 1e6)
    }

    pub fn ids(&self) -> impl DoubleEndedIterator<Item = RateId> + '_ {
        (0..self.mbps.len()).map(|i| RateId(i as u8))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.mbps
    }
}

impl Default for RateSet {
    fn default() -> Self {
        RateSet::dot11n()
    }
}

/// A client address (IPv4-sized).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClientId(pub u32);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u{}", self.0)
    }
}

/// Planar position in meters relative to the access point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn distance_to_ap(self) -> f64 {
        self.x.hypot(self.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Client {
    id: ClientId,
    position: Position,
    channels: BTreeSet<ChannelId>,
    rates: BTreeSet<RateId>,
    desired: BTreeSet<ViewId>,
    threshold: f64,
    max_protection_views: usize,
}

impl Client {
    pub const DEFAULT_MAX_PROTECTION_VIEWS: usize = 4;

    pub fn new(
        id: ClientId,
        channels: impl IntoIterator<Item = ChannelId>,
        rates: impl IntoIterator<Item = RateId>,
        desired: impl IntoIterator<Item = ViewId>,
        threshold: f64,
    ) -> Result<Self, ModelError> {
        let channels: BTreeSet<_> = channels.into_iter().collect();
        let rates: BTreeSet<_> = rates.into_iter().collect();
        let desired: BTreeSet<_> = desired.into_iter().collect();
        if channels.is_empty() {
            return Err(ModelError::NoChannels(id));
        }
        if rates.is_empty() {
            return Err(ModelError::NoRates(id));
        }
        if desired.is_empty() {
            return Err(ModelError::NoDesiredViews(id));
        }
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(ModelError::InvalidThreshold(threshold));
        }
        Ok(Client {
            id,
            position: Position::default(),
            channels,
            rates,
            desired,
            threshold,
            max_protection_views: Self::DEFAULT_MAX_PROTECTION_VIEWS,
        })
    }

    pub fn with_position(mut self, position: Position) -> Self {
        self.position = position;
        self
    }

    pub fn with_max_protection_views(mut self, cap: usize) -> Self {
        self.max_protection_views = cap.max(1);
        self
    }

    pub fn with_desired(mut self, desired: impl IntoIterator<Item = ViewId>) -> Result<Self, ModelError> {
        let desired: BTreeSet<_> = desired.into_iter().collect();
        if desired.is_empty() {
            return Err(ModelError::NoDesiredViews(self.id));
        }
        self.desired = desired;
        Ok(self)
    }

    pub fn id(&self) -> ClientId {
        self.id
    }

    pub fn position(&self) -> Position {
        self.position
    }

    pub fn channels(&self) -> &BTreeSet<ChannelId> {
        &self.channels
    }

    pub fn rates(&self) -> &BTreeSet<RateId> {
        &self.rates
    }

    pub fn desired_views(&self) -> &BTreeSet<ViewId> {
        &self.desired
    }

    /// The single desired view of a single-view subscriber (the lowest one
    /// when several are desired).
    pub fn primary_view(&self) -> ViewId {
        *self.desired.iter().next().expect("desired set is non-empty")
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn max_protection_views(&self) -> usize {
        self.max_protection_views
    }

    pub fn can_use(&self, channel: ChannelId, rate: RateId) -> bool {
        self.channels.contains(&channel) && self.rates.contains(&rate)
    }
}

/// Explicit per-(client, channel, rate) loss probabilities.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTable {
    entries: BTreeMap<(ClientId, ChannelId, RateId), f64>,
}

impl LossTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, client: ClientId, channel: ChannelId, rate: RateId, p: f64) -> Result<(), ModelError> {
        check_probability(p)?;
        self.entries.insert((client, channel, rate), p);
        Ok(())
    }

    pub fn with(mut self, client: ClientId, channel: ChannelId, rate: RateId, p: f64) -> Result<Self, ModelError> {
        self.insert(client, channel, rate, p)?;
        Ok(self)
    }

    pub fn get(&self, client: ClientId, channel: ChannelId, rate: RateId) -> Option<f64> {
        self.entries.get(&(client, channel, rate)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Scenario convenience model, not derived from measurements:
/// `p = 1 - (1 - base(r))^((d / d0)^gamma)`. Channels are interchangeable.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceRateModel {
    base: Vec<f64>,
    reference_distance: f64,
    exponent: f64,
}

impl DistanceRateModel {
    pub fn new(base: Vec<f64>, reference_distance: f64, exponent: f64) -> Result<Self, ModelError> {
        for &b in &base {
            check_probability(b)?;
        }
        if !(reference_distance.is_finite() && reference_distance > 0.0) {
            return Err(ModelError::InvalidDistanceModel(format!(
                "reference distance {reference_distance} must be positive"
            )));
        }
        if !(exponent.is_finite() && exponent >= 0.0) {
            return Err(ModelError::InvalidDistanceModel(format!("exponent {exponent} must be non-negative")));
        }
        Ok(DistanceRateModel { base, reference_distance, exponent })
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn reference_distance(&self) -> f64 {
        self.reference_distance
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn loss_at(&self, distance: f64, rate: RateId) -> Option<f64> {
        let base = *self.base.get(usize::from(rate.0))?;
        let scale = (distance / self.reference_distance).powf(self.exponent);
        Some((1.0 - (1.0 - base).powf(scale)).clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossModel {
    Table(LossTable),
    DistanceRate(DistanceRateModel),
}

impl LossModel {
    /// Loss probability `p_{i,c,r}` of one transmission on `(channel, rate)`.
    pub fn loss_probability(&self, client: &Client, channel: ChannelId, rate: RateId) -> Result<f64, ModelError> {
        if !client.can_use(channel, rate) {
            return Err(ModelError::Unavailable { client: client.id(), channel, rate });
        }
        match self {
            LossModel::Table(table) => table.get(client.id(), channel, rate).ok_or(ModelError::MissingLossEntry {
                client: client.id(),
                channel,
                rate,
            }),
            LossModel::DistanceRate(model) => model
                .loss_at(client.position().distance_to_ap(), rate)
                .ok_or(ModelError::RateOutOfRange(rate)),
        }
    }
}

/// A client's loss probabilities over `C_i x D_i`, resolved once.
#[derive(Debug, Clone, PartialEq)]
pub struct LossProfile {
    probs: BTreeMap<(ChannelId, RateId), f64>,
}

impl LossProfile {
    pub fn build(model: &LossModel, client: &Client) -> Result<Self, ModelError> {
        let mut probs = BTreeMap::new();
        for &c in client.channels() {
            for &r in client.rates() {
                probs.insert((c, r), model.loss_probability(client, c, r)?);
            }
        }
        Ok(LossProfile { probs })
    }

    pub fn from_entries(entries: impl IntoIterator<Item = ((ChannelId, RateId), f64)>) -> Result<Self, ModelError> {
        let mut probs = BTreeMap::new();
        for (key, p) in entries {
            check_probability(p)?;
            probs.insert(key, p);
        }
        Ok(LossProfile { probs })
    }

    /// `None` when the client cannot listen on `(channel, rate)`.
    pub fn get(&self, channel: ChannelId, rate: RateId) -> Option<f64> {
        self.probs.get(&(channel, rate)).copied()
    }

    /// The profile of a single-radio client fixed to `channel`.
    pub fn restricted_to_channel(&self, channel: ChannelId) -> LossProfile {
        LossProfile { probs: self.probs.iter().filter(|((c, _), _)| *c == channel).map(|(k, v)| (*k, *v)).collect() }
    }

    pub fn iter(&self) -> impl Iterator<Item = ((ChannelId, RateId), f64)> + '_ {
        self.probs.iter().map(|(k, v)| (*k, *v))
    }

    pub fn min_probability(&self) -> f64 {
        self.probs.values().copied().fold(1.0, f64::min)
    }
}

/// One multicast stream of a view: `(view, channel, rate)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InstanceKey {
    pub view: ViewId,
    pub channel: ChannelId,
    pub rate: RateId,
}

impl InstanceKey {
    pub fn new(view: ViewId, channel: ChannelId, rate: RateId) -> Self {
        InstanceKey { view, channel, rate }
    }
}

impl fmt::Display for InstanceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}/{}", self.view, self.channel, self.rate)
    }
}

/// Number of transmissions `n_{j,c,r}` per frame interval. Absent keys and
/// explicit zeros are the same thing; zeros are never stored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransmissionPlan {
    counts: BTreeMap<InstanceKey, u32>,
}

impl TransmissionPlan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: InstanceKey, n: u32) {
        if n == 0 {
            self.counts.remove(&key);
        } else {
            self.counts.insert(key, n);
        }
    }

    pub fn add(&mut self, key: InstanceKey, n: u32) {
        let total = self.count(key) + n;
        self.set(key, total);
    }

    pub fn with(mut self, key: InstanceKey, n: u32) -> Self {
        self.add(key, n);
        self
    }

    pub fn count(&self, key: InstanceKey) -> u32 {
        self.counts.get(&key).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (InstanceKey, u32)> + '_ {
        self.counts.iter().map(|(k, n)| (*k, *n))
    }

    /// Transmissions of one view.
    pub fn view_entries(&self, view: ViewId) -> impl Iterator<Item = (InstanceKey, u32)> + '_ {
        let lo = InstanceKey::new(view, ChannelId(0), RateId(0));
        let hi = InstanceKey::new(view, ChannelId(u8::MAX), RateId(u8::MAX));
        self.counts.range(lo..=hi).map(|(k, n)| (*k, *n))
    }

    pub fn views(&self) -> BTreeSet<ViewId> {
        self.counts.keys().map(|k| k.view).collect()
    }

    pub fn total_transmissions(&self) -> u64 {
        self.counts.values().map(|&n| u64::from(n)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    /// Keeps only the transmissions on `channel`.
    pub fn restricted_to_channel(&self, channel: ChannelId) -> TransmissionPlan {
        TransmissionPlan { counts: self.counts.iter().filter(|(k, _)| k.channel == channel).map(|(k, n)| (*k, *n)).collect() }
    }
}

impl FromIterator<(InstanceKey, u32)> for TransmissionPlan {
    fn from_iter<I: IntoIterator<Item = (InstanceKey, u32)>>(iter: I) -> Self {
        let mut plan = TransmissionPlan::new();
        for (k, n) in iter {
            plan.add(k, n);
        }
        plan
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlanVerdict {
    Feasible,
    /// The most loaded violating channel and its airtime / frame interval.
    Infeasible { channel: ChannelId, overload: f64 },
}

impl PlanVerdict {
    pub fn is_feasible(&self) -> bool {
        matches!(self, PlanVerdict::Feasible)
    }
}

/// Airtime in seconds of `n` transmissions of one frame interval's worth of
/// video payload at `rate_bps`. Header overhead is not modeled.
pub fn airtime_seconds(n: u32, video_rate: f64, frame_interval: f64, rate_bps: f64) -> f64 {
    f64::from(n) * video_rate * frame_interval / rate_bps
}

/// Per-channel airtime in seconds. Keys with a rate outside `rates` are
/// ignored.
pub fn channel_airtimes(
    plan: &TransmissionPlan,
    frame_interval: f64,
    video_rate: f64,
    rates: &RateSet,
) -> BTreeMap<ChannelId, f64> {
    let mut load = BTreeMap::new();
    for (key, n) in plan.iter() {
        if let Some(bps) = rates.bits_per_second(key.rate) {
            *load.entry(key.channel).or_insert(0.0) += airtime_seconds(n, video_rate, frame_interval, bps);
        }
    }
    load
}

/// Checks that every channel's airtime fits in one frame interval.
pub fn validate_plan(plan: &TransmissionPlan, frame_interval: f64, video_rate: f64, rates: &RateSet) -> PlanVerdict {
    let worst = channel_airtimes(plan, frame_interval, video_rate, rates)
        .into_iter()
        .map(|(c, t)| (c, t / frame_interval))
        .filter(|(_, ratio)| *ratio > 1.0 + 1e-12)
        .max_by(|a, b| a.1.total_cmp(&b.1));
    match worst {
        None => PlanVerdict::Feasible,
        Some((channel, overload)) => PlanVerdict::Infeasible { channel, overload },
    }
}

/// What the access point can carry: channels, PHY rates, frame interval and
/// per-view video rate.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCapacity {
    pub channels: u8,
    pub rates: RateSet,
    /// Seconds.
    pub frame_interval: f64,
    /// Bits per second of one view (texture plus depth).
    pub video_rate: f64,
}

impl CellCapacity {
    pub const DEFAULT_CHANNELS: u8 = 13;
    pub const DEFAULT_FRAME_INTERVAL: f64 = 0.0333;
    pub const DEFAULT_VIDEO_RATE: f64 = 800e3;

    /// Seconds of airtime for one transmission at `rate`.
    pub fn airtime(&self, rate: RateId) -> f64 {
        let bps = self.rates.bits_per_second(rate).expect("rate id within rate set");
        airtime_seconds(1, self.video_rate, self.frame_interval, bps)
    }

    pub fn check_key(&self, key: InstanceKey) -> Result<(), ModelError> {
        if key.channel.0 >= self.channels {
            return Err(ModelError::ChannelOutOfRange { channel: key.channel, channels: self.channels });
        }
        if self.rates.mbps(key.rate).is_none() {
            return Err(ModelError::RateOutOfRange(key.rate));
        }
        Ok(())
    }

    pub fn validate(&self, plan: &TransmissionPlan) -> Result<PlanVerdict, ModelError> {
        for (key, _) in plan.iter() {
            self.check_key(key)?;
        }
        Ok(validate_plan(plan, self.frame_interval, self.video_rate, &self.rates))
    }

    pub fn channel_ids(&self) -> impl Iterator<Item = ChannelId> {
        (0..self.channels).map(ChannelId)
    }
}

impl Default for CellCapacity {
    fn default() -> Self {
        CellCapacity {
            channels: Self::DEFAULT_CHANNELS,
            rates: RateSet::dot11n(),
            frame_interval: Self::DEFAULT_FRAME_INTERVAL,
            video_rate: Self::DEFAULT_VIDEO_RATE,
        }
    }
}

/// Distribution `p^AP_{c,r}(n)` of how many times the AP multicasts a view on
/// each `(channel, rate)`; entry `n` of a vector is the probability of `n`
/// transmissions. Absent pairs mean "never transmitted".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ApTransmissionPolicy {
    dists: BTreeMap<(ChannelId, RateId), Vec<f64>>,
}

impl ApTransmissionPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, channel: ChannelId, rate: RateId, dist: Vec<f64>) -> Result<(), ModelError> {
        let sum: f64 = dist.iter().sum();
        if dist.is_empty() || dist.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(ModelError::MalformedDistribution { channel, rate, sum });
        }
        self.dists.insert((channel, rate), dist);
        Ok(())
    }

    pub fn with(mut self, channel: ChannelId, rate: RateId, dist: Vec<f64>) -> Result<Self, ModelError> {
        self.insert(channel, rate, dist)?;
        Ok(self)
    }

    /// A policy that always transmits exactly `n` times on `(channel, rate)`.
    pub fn deterministic(entries: impl IntoIterator<Item = ((ChannelId, RateId), u32)>) -> Self {
        let mut policy = ApTransmissionPolicy::new();
        for ((c, r), n) in entries {
            let mut dist = vec![0.0; n as usize + 1];
            dist[n as usize] = 1.0;
            policy.dists.insert((c, r), dist);
        }
        policy
    }

    pub fn distribution(&self, channel: ChannelId, rate: RateId) -> Option<&[f64]> {
        self.dists.get(&(channel, rate)).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = ((ChannelId, RateId), &[f64])> + '_ {
        self.dists.iter().map(|(k, v)| (*k, v.as_slice()))
    }
}

pub(crate) fn check_probability(p: f64) -> Result<f64, ModelError> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(ModelError::InvalidProbability(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn client() -> Client {
        Client::new(ClientId(1), [ChannelId(0)], [RateId(0)], [ViewId(2)], 0.05).unwrap()
    }

    #[test]
    fn single_view_video_rejected() {
        assert_eq!(ViewSpace::new(1), Err(ModelError::TooFewViews(1)));
        assert!(ViewSpace::new(2).is_ok());
        let space = ViewSpace::new(4).unwrap();
        assert!(space.view(0).is_err());
        assert!(space.view(5).is_err());
        assert_eq!(space.view(4).unwrap().index(), 4);
    }

    #[test]
    fn client_invariants() {
        let none: [ChannelId; 0] = [];
        assert!(Client::new(ClientId(1), none, [RateId(0)], [ViewId(1)], 0.1).is_err());
        assert!(Client::new(ClientId(1), [ChannelId(0)], [RateId(0)], [ViewId(1)], 0.0).is_err());
        assert!(Client::new(ClientId(1), [ChannelId(0)], [RateId(0)], [ViewId(1)], 1.0).is_ok());
        let empty: [ViewId; 0] = [];
        assert!(Client::new(ClientId(1), [ChannelId(0)], [RateId(0)], empty, 0.1).is_err());
    }

    #[test]
    fn table_lookup() {
        let c = client();
        let model = LossModel::Table(LossTable::new().with(ClientId(1), ChannelId(0), RateId(0), 0.3).unwrap());
        assert_eq!(model.loss_probability(&c, ChannelId(0), RateId(0)), Ok(0.3));
        let other = Client::new(ClientId(2), [ChannelId(0)], [RateId(0)], [ViewId(2)], 0.05).unwrap();
        assert!(matches!(
            model.loss_probability(&other, ChannelId(0), RateId(0)),
            Err(ModelError::MissingLossEntry { .. })
        ));
        assert!(matches!(model.loss_probability(&c, ChannelId(1), RateId(0)), Err(ModelError::Unavailable { .. })));
    }

    #[test]
    fn distance_rate_model() {
        let model = DistanceRateModel::new(vec![0.1, 0.2], 10.0, 2.0).unwrap();
        let at_ref = client().with_position(Position { x: 10.0, y: 0.0 });
        let lm = LossModel::DistanceRate(model);
        assert!((lm.loss_probability(&at_ref, ChannelId(0), RateId(0)).unwrap() - 0.1).abs() < 1e-15);
        let far = client().with_position(Position { x: 0.0, y: 20.0 });
        // (d/d0)^gamma = 4
        let expected = 1.0 - 0.9f64 * 0.9 * 0.9 * 0.9;
        assert!((lm.loss_probability(&far, ChannelId(0), RateId(0)).unwrap() - expected).abs() < 1e-15);
        let at_ap = client();
        assert_eq!(lm.loss_probability(&at_ap, ChannelId(0), RateId(0)).unwrap(), 0.0);
    }

    #[test]
    fn zero_counts_are_not_stored() {
        let k = InstanceKey::new(ViewId(1), ChannelId(0), RateId(0));
        let mut plan = TransmissionPlan::new();
        plan.set(k, 0);
        assert_eq!(plan, TransmissionPlan::new());
        plan.add(k, 2);
        plan.set(k, 0);
        assert!(plan.is_empty());
    }

    #[test]
    fn plan_feasibility() {
        let rates = RateSet::dot11n();
        assert!(validate_plan(&TransmissionPlan::new(), 0.0333, 0.8e6, &rates).is_feasible());

        let one = TransmissionPlan::new().with(InstanceKey::new(ViewId(1), ChannelId(0), RateId(0)), 1);
        let air = channel_airtimes(&one, 0.0333, 0.8e6, &rates)[&ChannelId(0)];
        assert!((air - 0.8e6 * 0.0333 / 6.5e6).abs() < 1e-15);
        assert!(validate_plan(&one, 0.0333, 0.8e6, &rates).is_feasible());

        // Nine views at an effective 0.8 Mbps: each takes a full frame interval.
        let slow = RateSet::new(vec![0.8]).unwrap();
        let nine: TransmissionPlan =
            (1..=9).map(|v| (InstanceKey::new(ViewId(v), ChannelId(0), RateId(0)), 1)).collect();
        match validate_plan(&nine, 0.0333, 0.8e6, &slow) {
            PlanVerdict::Infeasible { channel, overload } => {
                assert_eq!(channel, ChannelId(0));
                assert!((overload - 9.0).abs() < 1e-12);
            }
            v => panic!("expected infeasible, got {v:?}"),
        }
    }

    #[test]
    fn policy_validation() {
        assert!(ApTransmissionPolicy::new().with(ChannelId(0), RateId(0), vec![0.5, 0.4]).is_err());
        assert!(ApTransmissionPolicy::new().with(ChannelId(0), RateId(0), vec![0.5, 0.5]).is_ok());
        assert!(ApTransmissionPolicy::new().with(ChannelId(0), RateId(0), vec![1.5, -0.5]).is_err());
        let det = ApTransmissionPolicy::deterministic([((ChannelId(1), RateId(2)), 2)]);
        assert_eq!(det.distribution(ChannelId(1), RateId(2)), Some(&[0.0, 0.0, 1.0][..]));
    }
}
