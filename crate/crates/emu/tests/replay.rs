use helper_core::sim::canonical;
use helper_core::sim::Simulator;
use helper_core::{RoutingMode, SimTime};
use helper_emu::World;
use proptest::prelude::*;

fn op() -> impl Strategy<Value = String> {
    prop_oneof![
        Just(r#"{"op":"nd"}"#.to_string()),
        (0u16..6).prop_map(|n| format!(r#"{{"op":"send","node":{n},"body":{{"type":"HELP","text":"help {n}"}}}}"#)),
        (0u16..6).prop_map(|n| format!(
            r#"{{"op":"send","node":{n},"body":{{"type":"RESOURCE","text":"food","resource_kind":"FOOD","location":{{"x":{n}.0,"y":1.0}}}}}}"#
        )),
        Just(r#"{"op":"alert","body":{"text":"move"}}"#.to_string()),
        (1u64..4).prop_map(|id| format!(r#"{{"op":"approve","body":{{"id":{id},"verdict":"approve"}}}}"#)),
        Just(r#"{"op":"snapshot"}"#.to_string()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// A live session and the offline run of its recording are the same run.
    #[test]
    fn recorded_sessions_replay_exactly(
        seed in 0u64..1000,
        sessions in 0usize..3,
        schedule in prop::collection::vec((0u64..240_000_000, op()), 1..12),
    ) {
        let mut sc = canonical::grid_scenario(sessions, RoutingMode::Seek, seed);
        sc.duration_s = 300.0;
        let mut world = World::new(sc).unwrap();
        let mut schedule = schedule;
        schedule.sort_by_key(|(t, _)| *t);
        for (t, frame) in &schedule {
            world.advance_to(SimTime(*t));
            world.handle_text(frame);
        }
        world.advance_to(SimTime::from_secs(300));
        let replay = Simulator::run(world.replay_scenario()).unwrap();
        let live = world.finish();
        prop_assert_eq!(&live.tx, &replay.tx);
        prop_assert_eq!(&live.deliveries, &replay.deliveries);
        prop_assert_eq!(&live.final_residual, &replay.final_residual);
        prop_assert!(replay.errors.is_empty(), "{:?}", replay.errors);
    }
}
