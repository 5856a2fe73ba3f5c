use mvgmp_core::analysis::{self, ViewLosses};
use mvgmp_core::model::{
    CellCapacity, ChannelId, ClientId, InstanceKey, LossProfile, RateId, RateSet, TransmissionPlan, ViewId,
};
use mvgmp_core::oracle::{self, TransmissionInstances};
use mvgmp_core::protocol::{JoinMessage, LeaveMessage, MvgmpMessage, TableSnapshot, ViewTable};
use proptest::prelude::*;

fn key_strategy(views: u16) -> impl Strategy<Value = InstanceKey> {
    (1..=views, 0u8..2, 0u8..2)
        .prop_map(|(v, c, r)| InstanceKey::new(ViewId::new(v).unwrap(), ChannelId(c), RateId(r)))
}

fn profile_strategy() -> impl Strategy<Value = LossProfile> {
    prop::collection::vec(0.0f64..=1.0, 4).prop_map(|p| {
        LossProfile::from_entries([
            ((ChannelId(0), RateId(0)), p[0]),
            ((ChannelId(0), RateId(1)), p[1]),
            ((ChannelId(1), RateId(0)), p[2]),
            ((ChannelId(1), RateId(1)), p[3]),
        ])
        .unwrap()
    })
}

fn plan_strategy(views: u16, max: usize) -> impl Strategy<Value = TransmissionPlan> {
    prop::collection::vec(key_strategy(views), 0..=max).prop_map(|keys| {
        let mut plan = TransmissionPlan::new();
        for k in keys {
            plan.add(k, 1);
        }
        plan
    })
}

fn capacity() -> CellCapacity {
    CellCapacity { channels: 2, rates: RateSet::dot11n(), frame_interval: 0.0333, video_rate: 800e3 }
}

proptest! {
    #[test]
    fn closure_is_idempotent_and_monotone(
        received in prop::collection::vec(any::<bool>(), 2..20),
        extra in prop::collection::vec(any::<bool>(), 20),
        range in 1u16..6,
    ) {
        let mut once = received.clone();
        oracle::close_under_synthesis(&mut once, range);
        let mut twice = once.clone();
        oracle::close_under_synthesis(&mut twice, range);
        prop_assert_eq!(&once, &twice);
        for (a, b) in received.iter().zip(&once) {
            prop_assert!(!a || *b);
        }
        let mut bigger: Vec<bool> = received.iter().zip(&extra).map(|(a, b)| *a || *b).collect();
        oracle::close_under_synthesis(&mut bigger, range);
        for (a, b) in once.iter().zip(&bigger) {
            prop_assert!(!a || *b);
        }
    }

    #[test]
    fn closed_form_matches_enumeration(
        profile in profile_strategy(),
        plan in plan_strategy(5, 8),
        views in 2u16..=5,
        range in 1u16..=3,
    ) {
        let plan: TransmissionPlan = plan.iter().filter(|(k, _)| k.view.index() <= views).collect();
        let instances = TransmissionInstances::new(&profile, &plan, views);
        for k in 1..=views {
            let view = ViewId::new(k).unwrap();
            let closed = analysis::failure_with_profile(&profile, view, &plan, views, range).value();
            let exact = oracle::enumerate_instances(&instances, view, range).unwrap();
            prop_assert!((closed - exact).abs() <= 1e-12, "view {k}: {closed} vs {exact}");
        }
    }

    #[test]
    fn more_transmissions_never_hurt(
        profile in profile_strategy(),
        plan in plan_strategy(6, 6),
        extra in key_strategy(6),
        range in 1u16..=4,
    ) {
        let mut more = plan.clone();
        more.add(extra, 1);
        for k in 1..=6 {
            let view = ViewId::new(k).unwrap();
            let before = analysis::failure_with_profile(&profile, view, &plan, 6, range).value();
            let after = analysis::failure_with_profile(&profile, view, &more, 6, range).value();
            prop_assert!((0.0..=1.0).contains(&before));
            prop_assert!(after <= before + 1e-12);
        }
    }

    #[test]
    fn wider_range_never_hurts(losses in prop::collection::vec(0.0f64..=1.0, 2..12), range in 1u16..6) {
        let l = ViewLosses::from_values(losses.clone());
        for k in 1..=losses.len() as u16 {
            let view = ViewId::new(k).unwrap();
            prop_assert!(l.failure(view, range + 1) <= l.failure(view, range) + 1e-12);
        }
    }

    #[test]
    fn acquisition_ratio_bounds(p in 0.0f64..=1.0, range in 1u16..8) {
        let a = analysis::asymptotic_alpha(p, range).unwrap().value();
        let b = analysis::asymptotic_alpha(p, range + 1).unwrap().value();
        prop_assert!(a >= 1.0 - p - 1e-12 && a <= 1.0 + 1e-12);
        prop_assert!(b >= a - 1e-12);
        let spaced = analysis::asymptotic_alpha_spaced(p, range, 1).unwrap().value();
        prop_assert!((spaced - a).abs() <= 1e-12);
    }

    #[test]
    fn messages_round_trip(
        client in any::<u32>(),
        keys in prop::collection::vec((1u16.., any::<u8>(), any::<u8>()), 1..40),
        join in any::<bool>(),
    ) {
        let views: Vec<InstanceKey> = keys
            .into_iter()
            .map(|(v, c, r)| InstanceKey::new(ViewId::new(v).unwrap(), ChannelId(c), RateId(r)))
            .collect();
        let msg = if join {
            MvgmpMessage::Join(JoinMessage { client: ClientId(client), views })
        } else {
            MvgmpMessage::Leave(LeaveMessage { client: ClientId(client), views })
        };
        let frame = msg.encode().unwrap();
        prop_assert_eq!(MvgmpMessage::decode(&frame).unwrap(), msg);
    }

    #[test]
    fn decoding_garbage_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let _ = MvgmpMessage::decode(&bytes);
        let _ = TableSnapshot::decode(&bytes);
    }

    #[test]
    fn table_version_tracks_changes(
        ops in prop::collection::vec((any::<bool>(), 0u32..5, prop::collection::vec(key_strategy(6), 1..4)), 1..40),
    ) {
        let mut table = ViewTable::new(capacity());
        for (i, (join, client, views)) in ops.into_iter().enumerate() {
            let before: Vec<_> = table.instances().cloned().collect();
            let version = table.version();
            if join {
                table.handle_join(&JoinMessage { client: ClientId(client), views }, i as f64).unwrap();
            } else {
                table.handle_leave(&LeaveMessage { client: ClientId(client), views }).unwrap();
            }
            let after: Vec<_> = table.instances().cloned().collect();
            prop_assert!(table.version() >= version);
            if before != after {
                prop_assert!(table.version() > version);
            }
            prop_assert!(table.check_invariants().is_ok());
            let snap = table.snapshot();
            prop_assert_eq!(TableSnapshot::decode(&snap.encode().unwrap()).unwrap(), snap);
        }
    }
}
