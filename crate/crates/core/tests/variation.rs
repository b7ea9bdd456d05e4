use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swm::envs::{push_t, two_room};
use swm::variation::{Domain, Value, VariationError, VariationRequest, VariationSpace, Violation};

const PUSH_T_NAMES: [&str; 16] = [
    "agent.angle",
    "agent.color",
    "agent.scale",
    "agent.shape",
    "agent.start_position",
    "agent.velocity",
    "background.color",
    "block.angle",
    "block.color",
    "block.scale",
    "block.shape",
    "block.start_position",
    "goal.angle",
    "goal.color",
    "goal.position",
    "goal.scale",
];

const TWO_ROOM_NAMES: [&str; 17] = [
    "agent.color",
    "agent.max_energy",
    "agent.position",
    "agent.radius",
    "agent.speed",
    "background.color",
    "door.color",
    "door.number",
    "door.position",
    "door.size",
    "goal.color",
    "goal.position",
    "goal.radius",
    "wall.axis",
    "wall.border_color",
    "wall.color",
    "wall.thickness",
];

fn set(names: &[&str]) -> BTreeSet<String> {
    names.iter().map(|s| s.to_string()).collect()
}

#[test]
fn catalogs_match_published_names() {
    assert_eq!(push_t::variation_space().names(), PUSH_T_NAMES);
    assert_eq!(two_room::variation_space().names(), TWO_ROOM_NAMES);
}

#[test]
fn empty_space_has_no_names() {
    assert!(VariationSpace::new().names().is_empty());
}

#[test]
fn group_and_leaf_selectors() {
    let space = push_t::variation_space();
    let got = space.resolve(&["agent", "block.color"]).unwrap();
    let mut want = set(&PUSH_T_NAMES[..6]);
    want.insert("block.color".into());
    assert_eq!(got.len(), 7);
    assert_eq!(got, want);
    assert_eq!(space.resolve(&["all"]).unwrap().len(), 16);
    assert!(space.resolve::<&str>(&[]).unwrap().is_empty());
}

#[test]
fn unknown_selector_names_itself_and_valid_options() {
    let space = two_room::variation_space();
    let err = space.resolve(&["door", "agent.colour"]).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("agent.colour"), "{msg}");
    assert!(msg.contains("agent.color") && msg.contains("wall"), "{msg}");
}

#[test]
fn nothing_selected_gives_defaults() {
    let space = push_t::variation_space();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = space.sample(&BTreeSet::new(), &mut rng, &Default::default()).unwrap();
    assert_eq!(a, space.defaults());
}

#[test]
fn fixed_value_overrides_sampling() {
    let space = push_t::variation_space();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let red = Value::Int(vec![255, 0, 0]);
    let fixed = [("agent.color".to_string(), red.clone())].into_iter().collect();
    let a = space.sample(&set(&["agent.color"]), &mut rng, &fixed).unwrap();
    let mut want = space.defaults();
    want.insert("agent.color".into(), red);
    assert_eq!(a, want);
}

#[test]
fn out_of_domain_fixed_value_is_reported() {
    let space = two_room::variation_space();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let fixed = [("agent.radius".to_string(), Value::real(-1.0))].into_iter().collect();
    let err = space.sample(&BTreeSet::new(), &mut rng, &fixed).unwrap_err();
    assert!(matches!(err, VariationError::OutOfDomain { ref leaf, .. } if leaf == "agent.radius"));
    let msg = err.to_string();
    assert!(
        msg.contains("agent.radius") && msg.contains("-1") && msg.contains("0.015"),
        "{msg}"
    );
}

#[test]
fn seeds_reproduce_and_distinguish() {
    let space = push_t::variation_space();
    let all = space.resolve(&["all"]).unwrap();
    let draw = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        space.sample(&all, &mut rng, &Default::default()).unwrap()
    };
    assert_eq!(draw(0), draw(0));
    // Brute-force check over 100 seed pairs: no two consecutive seeds collide.
    for s in 0..100 {
        assert_ne!(draw(s), draw(s + 1), "seeds {s} and {}", s + 1);
    }
}

#[test]
fn validate_reports_each_problem() {
    let space = two_room::variation_space();
    assert!(space.validate(&space.defaults()).is_empty());
    let mut missing = space.defaults();
    missing.remove("door.size");
    assert_eq!(space.validate(&missing), vec![Violation::Missing("door.size".into())]);
    let mut neg = space.defaults();
    neg.insert("agent.radius".into(), Value::real(-1.0));
    let v = space.validate(&neg);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].leaf(), "agent.radius");
}

#[test]
fn deep_names_rejected() {
    let mut space = VariationSpace::new();
    let err = space.register("agent.arm.color", Domain::rgb(), Value::Int(vec![0, 0, 0]));
    assert!(err.is_err());
    assert!(space
        .register("agent.color", Domain::rgb(), Value::Int(vec![0, 0, 0]))
        .is_ok());
}

#[test]
fn options_reject_unknown_keys() {
    assert!(VariationRequest::from_json(r#"{"variation": ["all"], "variation_values": {}}"#).is_ok());
    assert!(VariationRequest::from_json(r#"{"variation": ["all"], "varation_values": {}}"#).is_err());
}

fn spaces() -> impl Strategy<Value = VariationSpace> {
    prop_oneof![Just(push_t::variation_space()), Just(two_room::variation_space())]
}

fn selectors(space: &VariationSpace) -> impl Strategy<Value = Vec<String>> {
    let mut options: Vec<String> = space.names();
    options.extend(space.groups());
    options.push("all".into());
    proptest::collection::vec(proptest::sample::select(options), 0..5)
}

proptest! {
    #[test]
    fn samples_always_validate((space, sel) in spaces().prop_flat_map(|s| { let sel = selectors(&s); (Just(s), sel) }), seed in any::<u64>()) {
        let selected = space.resolve(&sel).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = space.sample(&selected, &mut rng, &Default::default()).unwrap();
        prop_assert!(space.validate(&a).is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert_eq!(a, space.sample(&selected, &mut rng, &Default::default()).unwrap());
    }

    #[test]
    fn resolution_is_idempotent((space, sel) in spaces().prop_flat_map(|s| { let sel = selectors(&s); (Just(s), sel) })) {
        let once = space.resolve(&sel).unwrap();
        let leaves: Vec<String> = once.iter().cloned().collect();
        prop_assert_eq!(space.resolve(&leaves).unwrap(), once);
    }

    #[test]
    fn all_is_union_of_groups(space in spaces()) {
        let groups = space.groups();
        prop_assert_eq!(space.resolve(&["all"]).unwrap(), space.resolve(&groups).unwrap());
    }
}
