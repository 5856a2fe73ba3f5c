//! Multi-view group management: the access point's view table, join/leave
//! handling, client-side view selection and re-organization, soft-state
//! expiry, and the byte-level message codec.
//!
//! Each multicast instance is one `(view, channel, rate)` stream sent once per
//! frame interval; a view needing more repeats is carried by several
//! instances on different channels or rates.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::analysis::{AnalysisError, ViewLosses};
use crate::model::{
    CellCapacity, ChannelId, Client, ClientId, InstanceKey, LossModel, LossProfile, ModelError, PlanVerdict, RateId,
    TransmissionPlan, ViewId,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("message carries no views")]
    EmptyMessage,
    #[error("desired view {view} outside 1..={views}")]
    ViewOutOfRange { view: u16, views: u16 },
}

/// Number of views `M` and synthesis range `R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    views: u16,
    range: u16,
}

impl Geometry {
    pub fn new(views: u16, range: u16) -> Result<Self, AnalysisError> {
        if views < 2 {
            return Err(AnalysisError::TooFewViews(views));
        }
        if range < 1 {
            return Err(AnalysisError::ZeroRange);
        }
        Ok(Geometry { views, range })
    }

    pub fn views(&self) -> u16 {
        self.views
    }

    pub fn range(&self) -> u16 {
        self.range
    }

    fn check(&self, view: ViewId) -> Result<(), ProtocolError> {
        if view.index() > self.views {
            Err(ProtocolError::ViewOutOfRange { view: view.index(), views: self.views })
        } else {
            Ok(())
        }
    }
}

/// One multicast stream with its group address and subscribers (client to
/// last refresh time, seconds).
#[derive(Debug, Clone, PartialEq)]
pub struct ViewInstance {
    pub key: InstanceKey,
    pub address: Ipv4Addr,
    pub subscribers: BTreeMap<ClientId, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewTable {
    capacity: CellCapacity,
    instances: BTreeMap<InstanceKey, ViewInstance>,
    version: u64,
    next_group: u32,
}

impl ViewTable {
    pub fn new(capacity: CellCapacity) -> Self {
        ViewTable { capacity, instances: BTreeMap::new(), version: 0, next_group: 1 }
    }

    pub fn capacity(&self) -> &CellCapacity {
        &self.capacity
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, key: InstanceKey) -> Option<&ViewInstance> {
        self.instances.get(&key)
    }

    pub fn instances(&self) -> impl Iterator<Item = &ViewInstance> {
        self.instances.values()
    }

    pub fn keys(&self) -> impl Iterator<Item = InstanceKey> + '_ {
        self.instances.keys().copied()
    }

    /// Each instance is one transmission per frame.
    pub fn implied_plan(&self) -> TransmissionPlan {
        self.instances.keys().map(|k| (*k, 1)).collect()
    }

    pub fn subscriptions_of(&self, client: ClientId) -> Vec<InstanceKey> {
        self.instances.values().filter(|i| i.subscribers.contains_key(&client)).map(|i| i.key).collect()
    }

    pub fn subscriber_count(&self, key: InstanceKey) -> usize {
        self.instances.get(&key).map_or(0, |i| i.subscribers.len())
    }

    /// Whether adding `extra` keeps every channel within the frame interval.
    pub fn fits(&self, extra: &[InstanceKey]) -> bool {
        if extra.iter().any(|k| self.capacity.check_key(*k).is_err()) {
            return false;
        }
        let mut plan = self.implied_plan();
        for k in extra {
            plan.set(*k, 1);
        }
        matches!(self.capacity.validate(&plan), Ok(PlanVerdict::Feasible))
    }

    /// Airtime (seconds) already used on each channel.
    pub fn channel_loads(&self) -> BTreeMap<ChannelId, f64> {
        let mut loads: BTreeMap<ChannelId, f64> = self.capacity.channel_ids().map(|c| (c, 0.0)).collect();
        for k in self.instances.keys() {
            *loads.entry(k.channel).or_insert(0.0) += self.capacity.airtime(k.rate);
        }
        loads
    }

    fn allocate_address(&mut self) -> Ipv4Addr {
        let n = self.next_group;
        self.next_group = self.next_group.wrapping_add(1).max(1);
        Ipv4Addr::new(239, 192, (n >> 8) as u8, n as u8)
    }

    /// Structural invariants: no empty instance, one address per triple,
    /// feasible implied plan.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut addresses = BTreeSet::new();
        for inst in self.instances.values() {
            if inst.subscribers.is_empty() {
                return Err(format!("instance {} has no subscriber", inst.key));
            }
            if !addresses.insert(inst.address) {
                return Err(format!("address {} used twice", inst.address));
            }
        }
        match self.capacity.validate(&self.implied_plan()) {
            Ok(PlanVerdict::Feasible) => Ok(()),
            Ok(v) => Err(format!("implied plan infeasible: {v:?}")),
            Err(e) => Err(e.to_string()),
        }
    }

    /// Adds or refreshes the sender's subscriptions. New instances are created
    /// only if the channel still has room; the rest are reported back.
    pub fn handle_join(&mut self, msg: &JoinMessage, now: f64) -> Result<JoinOutcome, ProtocolError> {
        if msg.views.is_empty() {
            return Err(ProtocolError::EmptyMessage);
        }
        let mut outcome = JoinOutcome::default();
        for &key in &msg.views {
            if let Some(inst) = self.instances.get_mut(&key) {
                if inst.subscribers.insert(msg.client, now).is_some() {
                    outcome.refreshed.push(key);
                } else {
                    outcome.subscribed.push(key);
                }
            } else if self.fits(&[key]) {
                let address = self.allocate_address();
                let subscribers = BTreeMap::from([(msg.client, now)]);
                self.instances.insert(key, ViewInstance { key, address, subscribers });
                outcome.created.push(key);
            } else {
                log::debug!("join from {}: no room for {key}", msg.client);
                outcome.rejected.push(key);
            }
        }
        if !(outcome.created.is_empty() && outcome.subscribed.is_empty() && outcome.refreshed.is_empty()) {
            self.version += 1;
        }
        Ok(outcome)
    }

    /// Removes the sender from the listed instances, withdrawing instances
    /// left without subscribers. Remaining co-subscribers are returned as
    /// notices.
    pub fn handle_leave(&mut self, msg: &LeaveMessage) -> Result<LeaveOutcome, ProtocolError> {
        if msg.views.is_empty() {
            return Err(ProtocolError::EmptyMessage);
        }
        let mut outcome = LeaveOutcome::default();
        for &key in &msg.views {
            let Some(inst) = self.instances.get_mut(&key) else {
                log::warn!("leave from {} for unknown instance {key}", msg.client);
                outcome.ignored.push(key);
                continue;
            };
            if inst.subscribers.remove(&msg.client).is_none() {
                log::warn!("leave from {} for {key} it does not subscribe", msg.client);
                outcome.ignored.push(key);
                continue;
            }
            if inst.subscribers.is_empty() {
                self.instances.remove(&key);
                outcome.withdrawn.push(key);
            } else {
                outcome
                    .notices
                    .extend(inst.subscribers.keys().map(|&recipient| Notice { recipient, instance: key }));
            }
        }
        if outcome.ignored.len() < msg.views.len() {
            self.version += 1;
        }
        Ok(outcome)
    }

    /// Drops subscribers silent for more than `miss_limit` refresh intervals,
    /// then withdraws instances left empty.
    pub fn expire_soft_state(&mut self, now: f64, refresh_interval: f64, miss_limit: u32) -> ExpiryOutcome {
        let deadline = f64::from(miss_limit.max(1)) * refresh_interval;
        let mut outcome = ExpiryOutcome::default();
        for inst in self.instances.values_mut() {
            let stale: Vec<ClientId> =
                inst.subscribers.iter().filter(|(_, &t)| now - t > deadline).map(|(&c, _)| c).collect();
            for c in stale {
                inst.subscribers.remove(&c);
                outcome.expired.push((c, inst.key));
            }
        }
        let empty: Vec<InstanceKey> =
            self.instances.values().filter(|i| i.subscribers.is_empty()).map(|i| i.key).collect();
        for key in empty {
            self.instances.remove(&key);
            outcome.withdrawn.push(key);
        }
        if !outcome.expired.is_empty() {
            self.version += 1;
        }
        outcome
    }

    /// The periodic broadcast form of the table.
    pub fn snapshot(&self) -> TableSnapshot {
        TableSnapshot {
            version: self.version as u32,
            entries: self
                .instances
                .values()
                .map(|i| SnapshotEntry {
                    key: i.key,
                    address: i.address,
                    subscribers: i.subscribers.len().min(usize::from(u16::MAX)) as u16,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct JoinOutcome {
    pub created: Vec<InstanceKey>,
    pub subscribed: Vec<InstanceKey>,
    pub refreshed: Vec<InstanceKey>,
    pub rejected: Vec<InstanceKey>,
}

/// A remaining subscriber of an instance someone just left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Notice {
    pub recipient: ClientId,
    pub instance: InstanceKey,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LeaveOutcome {
    pub withdrawn: Vec<InstanceKey>,
    pub notices: Vec<Notice>,
    pub ignored: Vec<InstanceKey>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExpiryOutcome {
    pub expired: Vec<(ClientId, InstanceKey)>,
    pub withdrawn: Vec<InstanceKey>,
}

/// Join: the complete list of instances a client wants. Re-sending it is the
/// soft-state refresh.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinMessage {
    pub client: ClientId,
    pub views: Vec<InstanceKey>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeaveMessage {
    pub client: ClientId,
    pub views: Vec<InstanceKey>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MvgmpMessage {
    Join(JoinMessage),
    Leave(LeaveMessage),
}

/// What a client decided to receive for one desired view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSelection {
    pub desired: ViewId,
    /// Instances of the desired view, existing or to be created.
    pub direct: Vec<InstanceKey>,
    /// Left/right instances used for synthesis.
    pub protection: Vec<InstanceKey>,
    /// The subset of `direct` the AP must create.
    pub create: Vec<InstanceKey>,
    pub predicted_failure: f64,
    /// False when no selection within capacity meets the threshold; the
    /// selection is then the best effort found.
    pub feasible: bool,
}

impl ViewSelection {
    pub fn instances(&self) -> Vec<InstanceKey> {
        self.direct.iter().chain(&self.protection).copied().collect()
    }

    pub fn join_message(&self, client: ClientId) -> JoinMessage {
        JoinMessage { client, views: self.instances() }
    }
}

/// Failure probability of a client subscribing to exactly `keys`.
pub fn subscription_failure(profile: &LossProfile, keys: &[InstanceKey], desired: ViewId, geometry: Geometry) -> f64 {
    let plan: TransmissionPlan = keys.iter().map(|k| (*k, 1)).collect();
    ViewLosses::from_plan(profile, &plan, geometry.views).failure(desired, geometry.range).clamp(0.0, 1.0)
}

/// Most copies of the desired view a single join may ask the AP to create.
pub const MAX_NEW_INSTANCES: usize = 8;

/// Chooses the instances a client should receive for `desired`:
///
/// 1. existing instances of the desired view, lowest loss first, if they
///    alone meet the threshold;
/// 2. otherwise greedily add the left/right pair (or a single side once the
///    other is covered) with the largest failure decrement, up to the
///    client's protection cap;
/// 3. otherwise ask for new instances of the desired view, choosing the rate
///    and number of copies with the least airtime that reaches the threshold,
///    then redo the protection choice against the enlarged direct set.
pub fn select_views(
    client: &Client,
    desired: ViewId,
    table: &ViewTable,
    geometry: Geometry,
    model: &LossModel,
) -> Result<ViewSelection, ProtocolError> {
    let profile = LossProfile::build(model, client)?;
    select_views_with_profile(client, &profile, desired, table, geometry)
}

pub fn select_views_with_profile(
    client: &Client,
    profile: &LossProfile,
    desired: ViewId,
    table: &ViewTable,
    geometry: Geometry,
) -> Result<ViewSelection, ProtocolError> {
    geometry.check(desired)?;
    let threshold = client.threshold();
    let fail = |keys: &[InstanceKey]| subscription_failure(profile, keys, desired, geometry);
    let loss_of = |k: &InstanceKey| profile.get(k.channel, k.rate).unwrap_or(1.0);

    let mut existing: Vec<InstanceKey> = table
        .keys()
        .filter(|k| k.view == desired && client.can_use(k.channel, k.rate))
        .collect();
    existing.sort_by(|a, b| {
        loss_of(a).total_cmp(&loss_of(b)).then(b.rate.cmp(&a.rate)).then(a.channel.cmp(&b.channel))
    });

    let mut direct = Vec::new();
    for key in existing {
        direct.push(key);
        let f = fail(&direct);
        if f <= threshold {
            return Ok(ViewSelection {
                desired,
                direct,
                protection: Vec::new(),
                create: Vec::new(),
                predicted_failure: f,
                feasible: true,
            });
        }
    }

    let protection = greedy_protection(client, profile, desired, table, geometry, &direct);
    let mut all: Vec<InstanceKey> = direct.iter().chain(&protection).copied().collect();
    let f = fail(&all);
    if f <= threshold {
        return Ok(ViewSelection { desired, direct, protection, create: Vec::new(), predicted_failure: f, feasible: true });
    }

    let (create, feasible) = plan_new_instances(client, profile, desired, table, geometry, &all);
    if create.is_empty() {
        return Ok(ViewSelection { desired, direct, protection, create, predicted_failure: f, feasible: false });
    }
    direct.extend(&create);
    all.extend(&create);
    let before = fail(&all);

    // fewer protection views may do now that the desired view is carried
    let reselected = greedy_protection(client, profile, desired, table, geometry, &direct);
    let mut candidate: Vec<InstanceKey> = direct.iter().chain(&reselected).copied().collect();
    let mut protection = reselected;
    let mut predicted = fail(&candidate);
    if predicted > threshold && before < predicted {
        protection = all.iter().filter(|k| k.view != desired).copied().collect();
        candidate = all;
        predicted = before;
    }
    debug_assert_eq!(candidate.len(), direct.len() + protection.len());
    Ok(ViewSelection {
        desired,
        direct,
        protection,
        create,
        predicted_failure: predicted,
        feasible: feasible && predicted <= threshold,
    })
}

/// Greedy left/right protection on top of `base`.
fn greedy_protection(
    client: &Client,
    profile: &LossProfile,
    desired: ViewId,
    table: &ViewTable,
    geometry: Geometry,
    base: &[InstanceKey],
) -> Vec<InstanceKey> {
    let k = desired.index();
    let range = geometry.range;
    if range < 2 || k == 1 || k == geometry.views {
        return Vec::new();
    }
    let threshold = client.threshold();
    let cap = client.max_protection_views();
    let candidates: Vec<InstanceKey> = table
        .keys()
        .filter(|c| c.view != desired && c.view.distance(desired) < range && client.can_use(c.channel, c.rate))
        .collect();
    let left: Vec<InstanceKey> = candidates.iter().filter(|c| c.view < desired).copied().collect();
    let right: Vec<InstanceKey> = candidates.iter().filter(|c| c.view > desired).copied().collect();

    let mut chosen: Vec<InstanceKey> = Vec::new();
    let mut current: Vec<InstanceKey> = base.to_vec();
    let mut current_fail = subscription_failure(profile, &current, desired, geometry);
    while current_fail > threshold && chosen.len() < cap {
        let has_left = chosen.iter().any(|c| c.view < desired);
        let has_right = chosen.iter().any(|c| c.view > desired);
        let mut options: Vec<Vec<InstanceKey>> = Vec::new();
        if chosen.len() + 2 <= cap {
            for a in left.iter().filter(|a| !chosen.contains(a)) {
                for b in right.iter().filter(|b| !chosen.contains(b)) {
                    if b.view.index() - a.view.index() <= range {
                        options.push(vec![*a, *b]);
                    }
                }
            }
        }
        if has_right {
            options.extend(left.iter().filter(|a| !chosen.contains(a)).map(|a| vec![*a]));
        }
        if has_left {
            options.extend(right.iter().filter(|b| !chosen.contains(b)).map(|b| vec![*b]));
        }

        let mut best: Option<(f64, Vec<InstanceKey>)> = None;
        for option in options {
            let mut trial = current.clone();
            trial.extend(&option);
            let f = subscription_failure(profile, &trial, desired, geometry);
            let decrement = current_fail - f;
            if decrement <= 0.0 {
                continue;
            }
            let better = match &best {
                None => true,
                Some((best_dec, best_opt)) => {
                    decrement > *best_dec
                        || (decrement == *best_dec && tie_rank(&option, desired) < tie_rank(best_opt, desired))
                }
            };
            if better {
                best = Some((decrement, option));
            }
        }
        let Some((_, option)) = best else { break };
        chosen.extend(&option);
        current.extend(&option);
        current_fail = subscription_failure(profile, &current, desired, geometry);
    }
    chosen
}

/// Tie-break among equal decrements: closer views, then higher rates, then
/// lower channel indices.
fn tie_rank(option: &[InstanceKey], desired: ViewId) -> (u32, i32, u32) {
    let distance = option.iter().map(|k| u32::from(k.view.distance(desired))).sum();
    let rate = -option.iter().map(|k| i32::from(k.rate.0)).sum::<i32>();
    let channel = option.iter().map(|k| u32::from(k.channel.0)).sum();
    (distance, rate, channel)
}

/// New instances of the desired view: for each rate, add copies on the best
/// free channels until the threshold is met, and keep the rate with the least
/// total airtime. Falls back to the lowest reachable failure (flagged
/// infeasible) when no rate reaches the threshold.
fn plan_new_instances(
    client: &Client,
    profile: &LossProfile,
    desired: ViewId,
    table: &ViewTable,
    geometry: Geometry,
    current: &[InstanceKey],
) -> (Vec<InstanceKey>, bool) {
    let threshold = client.threshold();
    let capacity = table.capacity();
    let loads = table.channel_loads();
    let mut best_ok: Option<(f64, Vec<InstanceKey>)> = None;
    let mut best_effort: Option<(f64, Vec<InstanceKey>)> = None;

    for &rate in client.rates().iter().rev() {
        if capacity.rates.mbps(rate).is_none() {
            continue;
        }
        let mut channels: Vec<ChannelId> = client
            .channels()
            .iter()
            .copied()
            .filter(|c| c.0 < capacity.channels)
            .filter(|c| table.get(InstanceKey::new(desired, *c, rate)).is_none())
            .collect();
        channels.sort_by(|a, b| {
            let pa = profile.get(*a, rate).unwrap_or(1.0);
            let pb = profile.get(*b, rate).unwrap_or(1.0);
            pa.total_cmp(&pb).then(loads[a].total_cmp(&loads[b])).then(a.cmp(b))
        });
        let mut added: Vec<InstanceKey> = Vec::new();
        let mut trial: Vec<InstanceKey> = current.to_vec();
        for c in channels {
            if added.len() >= MAX_NEW_INSTANCES {
                break;
            }
            let key = InstanceKey::new(desired, c, rate);
            let mut with = added.clone();
            with.push(key);
            if !table.fits(&with) {
                continue;
            }
            added = with;
            trial.push(key);
            let f = subscription_failure(profile, &trial, desired, geometry);
            let cost = added.len() as f64 * capacity.airtime(rate);
            if best_effort.as_ref().is_none_or(|(bf, _)| f < *bf) {
                best_effort = Some((f, added.clone()));
            }
            if f <= threshold {
                if best_ok.as_ref().is_none_or(|(bc, _)| cost < *bc - 1e-15) {
                    best_ok = Some((cost, added.clone()));
                }
                break;
            }
        }
    }
    match (best_ok, best_effort) {
        (Some((_, keys)), _) => (keys, true),
        (None, Some((_, keys))) => (keys, false),
        (None, None) => (Vec::new(), false),
    }
}

/// Paired leave/join a client sends after re-organizing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reorganization {
    pub leave: LeaveMessage,
    pub join: Option<JoinMessage>,
}

/// Re-examines a protection subscription after a co-subscriber left:
/// drop all protection if the desired view alone suffices, else drop the
/// affected instance if it is not needed, else swap it for another
/// transmitted instance, with at least as many subscribers, that keeps the
/// client within its threshold (preferring more subscribers). `None` keeps
/// the current subscription.
pub fn reorganize(
    client: &Client,
    affected: InstanceKey,
    table: &ViewTable,
    geometry: Geometry,
    model: &LossModel,
) -> Result<Option<Reorganization>, ProtocolError> {
    let profile = LossProfile::build(model, client)?;
    Ok(reorganize_with_profile(client, &profile, affected, table, geometry))
}

pub fn reorganize_with_profile(
    client: &Client,
    profile: &LossProfile,
    affected: InstanceKey,
    table: &ViewTable,
    geometry: Geometry,
) -> Option<Reorganization> {
    let desired = client.primary_view();
    let current = table.subscriptions_of(client.id());
    if affected.view == desired || !current.contains(&affected) {
        return None;
    }
    let threshold = client.threshold();
    let fail = |keys: &[InstanceKey]| subscription_failure(profile, keys, desired, geometry);
    let direct: Vec<InstanceKey> = current.iter().filter(|k| k.view == desired).copied().collect();
    let protection: Vec<InstanceKey> = current.iter().filter(|k| k.view != desired).copied().collect();
    let leave = |views: Vec<InstanceKey>| LeaveMessage { client: client.id(), views };

    if !direct.is_empty() && fail(&direct) <= threshold {
        return Some(Reorganization { leave: leave(protection), join: None });
    }
    let rest: Vec<InstanceKey> = current.iter().filter(|k| **k != affected).copied().collect();
    if fail(&rest) <= threshold {
        return Some(Reorganization { leave: leave(vec![affected]), join: None });
    }

    // only move to instances at least as popular as the one left, so chains
    // of re-organizations merge subscribers and terminate
    let affected_count = table.subscriber_count(affected);
    let mut best: Option<((std::cmp::Reverse<usize>, u16, i16, u8), f64, InstanceKey)> = None;
    for alt in table.keys() {
        if current.contains(&alt)
            || table.subscriber_count(alt) < affected_count
            || alt.view == desired
            || alt.view.distance(desired) >= geometry.range
            || !client.can_use(alt.channel, alt.rate)
        {
            continue;
        }
        let mut trial = rest.clone();
        trial.push(alt);
        let f = fail(&trial);
        if f > threshold {
            continue;
        }
        let rank = (
            std::cmp::Reverse(table.subscriber_count(alt)),
            alt.view.distance(desired),
            -i16::from(alt.rate.0),
            alt.channel.0,
        );
        let better = match &best {
            None => true,
            Some((r, bf, _)) => f < *bf - 1e-15 || ((f - bf).abs() <= 1e-15 && rank < *r),
        };
        if better {
            best = Some((rank, f, alt));
        }
    }
    best.map(|(_, _, alt)| Reorganization {
        leave: leave(vec![affected]),
        join: Some(JoinMessage { client: client.id(), views: vec![alt] }),
    })
}

// ---------------------------------------------------------------------------
// Wire format (all integers big-endian):
//
//   Join / Leave:  type:u8 (1 = Join, 2 = Leave) | client:u32 | count:u16 |
//                  count x (view:u16 | channel:u8 | rate index:u8)
//   Table:         type:u8 (3) | version:u32 | count:u16 |
//                  count x (view:u16 | channel:u8 | rate index:u8 |
//                           group address:4 bytes | subscribers:u16)
// ---------------------------------------------------------------------------

pub const TYPE_JOIN: u8 = 1;
pub const TYPE_LEAVE: u8 = 2;
pub const TYPE_TABLE: u8 = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("message carries no views")]
    EmptyViewList,
    #[error("{0} entries exceed the 16-bit count field")]
    TooManyEntries(usize),
    #[error("frame truncated: needed {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("view index 0 is invalid")]
    ZeroView,
    #[error("{0} trailing bytes after message")]
    TrailingBytes(usize),
}

/// Broadcast form of a [`ViewTable`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableSnapshot {
    pub version: u32,
    pub entries: Vec<SnapshotEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnapshotEntry {
    pub key: InstanceKey,
    pub address: Ipv4Addr,
    pub subscribers: u16,
}

impl MvgmpMessage {
    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        let (kind, client, views) = match self {
            MvgmpMessage::Join(m) => (TYPE_JOIN, m.client, &m.views),
            MvgmpMessage::Leave(m) => (TYPE_LEAVE, m.client, &m.views),
        };
        if views.is_empty() {
            return Err(CodecError::EmptyViewList);
        }
        let count = u16::try_from(views.len()).map_err(|_| CodecError::TooManyEntries(views.len()))?;
        let mut out = Vec::with_capacity(7 + 4 * views.len());
        out.push(kind);
        out.extend_from_slice(&client.0.to_be_bytes());
        out.extend_from_slice(&count.to_be_bytes());
        for k in views {
            put_key(&mut out, *k);
        }
        Ok(out)
    }

    pub fn decode(frame: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(frame);
        let kind = r.u8()?;
        if kind != TYPE_JOIN && kind != TYPE_LEAVE {
            return Err(CodecError::UnknownType(kind));
        }
        let client = ClientId(r.u32()?);
        let count = r.u16()?;
        if count == 0 {
            return Err(CodecError::EmptyViewList);
        }
        let views = (0..count).map(|_| r.key()).collect::<Result<Vec<_>, _>>()?;
        r.finish()?;
        Ok(if kind == TYPE_JOIN {
            MvgmpMessage::Join(JoinMessage { client, views })
        } else {
            MvgmpMessage::Leave(LeaveMessage { client, views })
        })
    }
}

impl TableSnapshot {
    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        let count = u16::try_from(self.entries.len()).map_err(|_| CodecError::TooManyEntries(self.entries.len()))?;
        let mut out = Vec::with_capacity(7 + 10 * self.entries.len());
        out.push(TYPE_TABLE);
        out.extend_from_slice(&self.version.to_be_bytes());
        out.extend_from_slice(&count.to_be_bytes());
        for e in &self.entries {
            put_key(&mut out, e.key);
            out.extend_from_slice(&e.address.octets());
            out.extend_from_slice(&e.subscribers.to_be_bytes());
        }
        Ok(out)
    }

    pub fn decode(frame: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(frame);
        let kind = r.u8()?;
        if kind != TYPE_TABLE {
            return Err(CodecError::UnknownType(kind));
        }
        let version = r.u32()?;
        let count = r.u16()?;
        let entries = (0..count)
            .map(|_| {
                let key = r.key()?;
                let address = Ipv4Addr::from(r.u32()?);
                let subscribers = r.u16()?;
                Ok(SnapshotEntry { key, address, subscribers })
            })
            .collect::<Result<Vec<_>, CodecError>>()?;
        r.finish()?;
        Ok(TableSnapshot { version, entries })
    }
}

fn put_key(out: &mut Vec<u8>, k: InstanceKey) {
    out.extend_from_slice(&k.view.index().to_be_bytes());
    out.push(k.channel.0);
    out.push(k.rate.0);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        let end = self.pos + N;
        let bytes = self.buf.get(self.pos..end).ok_or(CodecError::Truncated { needed: end, have: self.buf.len() })?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice of length N"))
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_be_bytes(self.take()?))
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.take()?))
    }

    fn key(&mut self) -> Result<InstanceKey, CodecError> {
        let view = ViewId::new(self.u16()?).map_err(|_| CodecError::ZeroView)?;
        let channel = ChannelId(self.u8()?);
        let rate = RateId(self.u8()?);
        Ok(InstanceKey::new(view, channel, rate))
    }

    fn finish(&self) -> Result<(), CodecError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(CodecError::TrailingBytes(n)),
        }
    }
}
