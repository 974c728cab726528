mod common;

use proptest::prelude::*;

use afd_lab::afd::{is_sampling, is_strong_sampling, mincrash, AfdTrace};
use afd_lab::consensus::{check_consensus_trace, consensus_system, ConsensusTrace};
use afd_lab::gadget::cantor_pair;
use afd_lab::ioa::{run_fair, Action, External, Loc, SchedulerPolicy};
use afd_lab::observation::{observation_from_trace, Observation};
use afd_lab::system::{channel_step, ChannelState, Locations, Message};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn mincrash_is_idempotent(seed: u64, n in 2u8..5, len in 0usize..40) {
        let t = AfdTrace::new(n, common::random_events(&mut common::rng(seed), n, len), true);
        let once = mincrash(&t);
        prop_assert_eq!(mincrash(&once), once.clone());
        prop_assert!(once.events.len() <= t.events.len());
    }

    #[test]
    fn trace_text_round_trips(seed: u64, n in 2u8..5, len in 0usize..40, complete: bool) {
        let t = AfdTrace::new(n, common::random_events(&mut common::rng(seed), n, len), complete);
        prop_assert_eq!(AfdTrace::parse(&t.to_text()).unwrap(), t);
    }

    #[test]
    fn samplings_of_valid_traces_are_strong_samplings(seed: u64, n in 2u8..4, len in 1usize..30) {
        let mut r = common::rng(seed);
        let t = common::valid_trace(&mut r, n, len);
        let s = common::sample(&mut r, &t);
        prop_assert!(is_sampling(&s, &t));
        prop_assert!(is_strong_sampling(&s, &t));
    }

    #[test]
    fn observation_of_a_trace_validates_and_round_trips(seed: u64, n in 2u8..4, len in 1usize..20) {
        let t = common::valid_trace(&mut common::rng(seed), n, len);
        let g = observation_from_trace(&t).unwrap();
        prop_assert!(g.validate().is_ok());
        prop_assert_eq!(Observation::parse(&g.to_text()).unwrap(), g);
    }

    #[test]
    fn greedy_prefixes_are_valid_prefixes(seed: u64, n in 2u8..4, len in 1usize..20, size in 0usize..25) {
        let t = common::valid_trace(&mut common::rng(seed), n, len);
        let g = observation_from_trace(&t).unwrap();
        let p = g.greedy_prefix(size);
        prop_assert_eq!(p.len(), size.min(g.len()));
        prop_assert!(p.validate().is_ok());
        prop_assert!(p.is_prefix_of(&g));
    }

    #[test]
    fn union_with_a_prefix_is_the_whole(seed: u64, len in 1usize..20, size in 0usize..20) {
        let t = common::valid_trace(&mut common::rng(seed), 3, len);
        let g = observation_from_trace(&t).unwrap();
        let p = g.greedy_prefix(size);
        prop_assert_eq!(g.union(&p).unwrap(), g.clone());
        prop_assert_eq!(p.union(&g).unwrap(), g);
    }

    #[test]
    fn channels_deliver_in_send_order(values in proptest::collection::vec(0u32..1000, 0..20)) {
        let msgs: Vec<Message> = values.iter().map(|&r| Message::Consensus(afd_lab::consensus::CtMsg::Nudge { round: r })).collect();
        let mut s = ChannelState::default();
        for m in &msgs {
            s = channel_step(&s, &Action::send(Loc(1), Loc(2), m.clone())).unwrap();
        }
        for m in &msgs {
            // Only the head of the queue may be received.
            if let Some(other) = msgs.iter().find(|x| *x != m) {
                prop_assert!(channel_step(&s, &Action::receive(Loc(1), Loc(2), other.clone())).is_none());
            }
            s = channel_step(&s, &Action::receive(Loc(1), Loc(2), m.clone())).unwrap();
        }
        prop_assert!(s.queue.is_empty());
    }

    #[test]
    fn cantor_pair_is_injective_and_invertible(a in 0u128..1 << 40, b in 0u128..1 << 40) {
        let z = cantor_pair(a, b).unwrap();
        // Invert: w is the largest w with w(w+1)/2 <= z.
        let mut w = ((8 * z + 1) as f64).sqrt() as u128 / 2;
        while w * (w + 1) / 2 > z {
            w -= 1;
        }
        while (w + 1) * (w + 2) / 2 <= z {
            w += 1;
        }
        let y = z - w * (w + 1) / 2;
        prop_assert_eq!((w - y, y), (a, b));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn seeded_runs_are_deterministic(seed: u64) {
        let built = consensus_system(Locations::new(3, 1).unwrap(), None, true).unwrap();
        let policy = SchedulerPolicy::seeded(seed, 300);
        let crash = [External { turn: 50, action: Action::crash(Loc(2)) }];
        let a = run_fair(&built.system, &policy, &crash).unwrap();
        let b = run_fair(&built.system, &policy, &crash).unwrap();
        prop_assert_eq!(a.schedule, b.schedule);
        prop_assert_eq!(a.execution.events, b.execution.events);
    }

    #[test]
    fn small_consensus_runs_agree(seed: u64, proposes in proptest::collection::vec(0u8..2, 3), crash in proptest::option::of((0usize..300, 1u8..4))) {
        let built = consensus_system(Locations::new(3, 1).unwrap(), Some(&proposes), true).unwrap();
        let ext: Vec<External> = crash.into_iter().map(|(turn, i)| External { turn, action: Action::crash(Loc(i)) }).collect();
        let run = run_fair(&built.system, &SchedulerPolicy::seeded(seed, 1500), &ext).unwrap();
        let t = ConsensusTrace::from_events(3, &run.execution.events, true);
        let v = check_consensus_trace(&t, 1, true);
        prop_assert!(v.overall.holds(), "{}", v.overall);
        let decided = t.decision_values();
        prop_assert_eq!(decided.len(), 1);
        prop_assert!(proposes.contains(decided.iter().next().unwrap()));
    }
}
