use std::f64::consts::PI;

use ndarray::Array3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swm::envs::geometry::Vec2;
use swm::envs::push_t::{self, BlockShape, Pose, PushT, PENETRATION_TOLERANCE, SUCCESS_COVERAGE};
use swm::envs::two_room::TwoRoom;
use swm::envs::{make, Env, EnvConfig, PUSH_T_ID, TWO_ROOM_ID};
use swm::variation::{Assignment, Value};

fn config(size: usize) -> EnvConfig {
    EnvConfig { image_size: size }
}

fn sample_all(env: &dyn Env, seed: u64) -> Assignment {
    let space = env.variation_space();
    let all = space.resolve(&["all"]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    space.sample(&all, &mut rng, &Default::default()).unwrap()
}

fn count_color(img: &Array3<u8>, rgb: [u8; 3]) -> usize {
    img.outer_iter()
        .flat_map(|row| row.outer_iter().map(|p| [p[0], p[1], p[2]]).collect::<Vec<_>>())
        .filter(|p| *p == rgb)
        .count()
}

// Crossing-number point-in-polygon, independent of the library's convex test.
fn inside(poly: &[Vec2], p: Vec2) -> bool {
    let mut hit = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                hit = !hit;
            }
        }
    }
    hit
}

/// Area fraction of the goal shape covered by the block, by grid sampling.
fn coverage_oracle(shape: BlockShape, block: Pose, bscale: f64, goal: Pose, gscale: f64, n: usize) -> f64 {
    let b = push_t::placed_pieces(shape, block, bscale);
    let g = push_t::placed_pieces(shape, goal, gscale);
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for v in g.iter().flatten() {
        x0 = x0.min(v.x);
        y0 = y0.min(v.y);
        x1 = x1.max(v.x);
        y1 = y1.max(v.y);
    }
    let (mut in_goal, mut in_both) = (0usize, 0usize);
    for i in 0..n {
        for j in 0..n {
            let p = Vec2::new(
                x0 + (i as f64 + 0.5) / n as f64 * (x1 - x0),
                y0 + (j as f64 + 0.5) / n as f64 * (y1 - y0),
            );
            if g.iter().any(|poly| inside(poly, p)) {
                in_goal += 1;
                if b.iter().any(|poly| inside(poly, p)) {
                    in_both += 1;
                }
            }
        }
    }
    in_both as f64 / in_goal as f64
}

#[test]
fn registry_builds_both_envs() {
    for id in [PUSH_T_ID, TWO_ROOM_ID] {
        assert_eq!(make(id, config(16)).unwrap().id(), id);
    }
    assert!(make("swm/Nope-v0", config(16)).is_err());
}

#[test]
fn block_flipped_half_turn_misses_threshold() {
    let goal = Pose {
        position: Vec2::new(0.5, 0.5),
        angle: PI / 4.0,
    };
    let flipped = Pose {
        angle: goal.angle + PI,
        ..goal
    };
    let oracle = coverage_oracle(BlockShape::T, flipped, 1.0, goal, 1.0, 600);
    let got = push_t::coverage(BlockShape::T, flipped, 1.0, goal, 1.0);
    assert!((got - oracle).abs() < 5e-3, "coverage {got} vs oracle {oracle}");
    assert!(got < SUCCESS_COVERAGE, "{got}");

    let mut env = PushT::new(config(32));
    let d = env.variation_space().defaults();
    env.reset(0, &d).unwrap();
    let mut s = env.state();
    s[4] = s[7];
    s[5] = s[8];
    s[6] = s[9] + PI as f32;
    env.set_state(&s).unwrap();
    assert!(!env.is_success());
}

#[test]
fn default_push_t_start_is_not_solved() {
    let mut env = PushT::new(config(32));
    let d = env.variation_space().defaults();
    env.reset(0, &d).unwrap();
    assert!(!env.is_success());
    assert!(!env.is_done());
}

#[test]
fn identical_inputs_give_identical_trajectories() {
    for id in [PUSH_T_ID, TWO_ROOM_ID] {
        let run = || {
            let mut env = make(id, config(48)).unwrap();
            let a = sample_all(env.as_ref(), 3);
            env.reset(3, &a).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut frames = vec![env.observe()];
            for _ in 0..40 {
                if env.is_done() {
                    break;
                }
                let act = [rng.random_range(-1.0..=1.0f32), rng.random_range(-1.0..=1.0f32)];
                env.step(&act).unwrap();
                frames.push(env.observe());
            }
            frames
        };
        let (a, b) = (run(), run());
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.pixels, y.pixels);
            let xs: Vec<u32> = x.state.iter().map(|v| v.to_bits()).collect();
            let ys: Vec<u32> = y.state.iter().map(|v| v.to_bits()).collect();
            assert_eq!(xs, ys);
        }
    }
}

#[test]
fn background_color_changes_only_background_pixels() {
    for id in [PUSH_T_ID, TWO_ROOM_ID] {
        let mut env = make(id, config(64)).unwrap();
        let mut a = env.variation_space().defaults();
        env.reset(0, &a).unwrap();
        let before = env.render();
        let old = match a.get("background.color") {
            Some(Value::Int(v)) => [v[0] as u8, v[1] as u8, v[2] as u8],
            other => panic!("{other:?}"),
        };
        let new = [12u8, 34, 56];
        a.insert(
            "background.color".into(),
            Value::Int(new.iter().map(|&c| c as i64).collect()),
        );
        env.reset(0, &a).unwrap();
        let after = env.render();
        let mut changed = 0;
        for y in 0..64 {
            for x in 0..64 {
                let p = [before[[y, x, 0]], before[[y, x, 1]], before[[y, x, 2]]];
                let q = [after[[y, x, 0]], after[[y, x, 1]], after[[y, x, 2]]];
                if p != q {
                    assert_eq!(p, old, "{id}: non-background pixel ({y},{x}) changed");
                    assert_eq!(q, new);
                    changed += 1;
                }
            }
        }
        assert!(changed > 0, "{id}");
        assert_eq!(changed, count_color(&before, old), "{id}");
    }
}

#[test]
fn doubling_agent_scale_grows_the_agent_blob() {
    let mut env = PushT::new(config(96));
    let mut a = env.variation_space().defaults();
    let color = [65u8, 105, 225];
    let pixels_at = |env: &mut PushT, a: &Assignment| {
        env.reset(0, a).unwrap();
        let mut s = env.state();
        s[0] = 0.15;
        s[1] = 0.85;
        env.set_state(&s).unwrap();
        count_color(&env.render(), color)
    };
    let small = pixels_at(&mut env, &a);
    a.insert("agent.scale".into(), Value::real(2.0));
    let large = pixels_at(&mut env, &a);
    assert!(small > 0);
    assert!(large > small, "{small} -> {large}");

    let mut env = TwoRoom::new(config(96));
    let mut a = env.variation_space().defaults();
    let color = match a.get("agent.color") {
        Some(Value::Int(v)) => [v[0] as u8, v[1] as u8, v[2] as u8],
        other => panic!("{other:?}"),
    };
    env.reset(0, &a).unwrap();
    let small = count_color(&env.render(), color);
    a.insert("agent.radius".into(), Value::real(0.04));
    env.reset(0, &a).unwrap();
    let large = count_color(&env.render(), color);
    assert!(large > small, "{small} -> {large}");
}

#[test]
fn physical_leaves_do_not_change_pixels() {
    let mut env = TwoRoom::new(config(64));
    let mut a = env.variation_space().defaults();
    env.reset(0, &a).unwrap();
    let state = env.state();
    let before = env.render();
    a.insert("agent.max_energy".into(), Value::real(1.5));
    a.insert("agent.speed".into(), Value::real(0.02));
    env.reset(0, &a).unwrap();
    env.set_state(&state).unwrap();
    assert_eq!(env.render(), before);

    let mut env = PushT::new(config(64));
    let mut a = env.variation_space().defaults();
    env.reset(0, &a).unwrap();
    let state = env.state();
    let before = env.render();
    a.insert("agent.velocity".into(), Value::real(2.0));
    env.reset(0, &a).unwrap();
    env.set_state(&state).unwrap();
    assert_eq!(env.render(), before);
}

#[test]
fn goal_render_matches_goal_configuration() {
    let mut env = TwoRoom::new(config(32));
    let a = env.variation_space().defaults();
    env.reset(0, &a).unwrap();
    let goal = env.goal_state();
    let mut s = env.state();
    s[0] = goal[0];
    s[1] = goal[1];
    env.set_state(&s).unwrap();
    assert_eq!(env.render(), env.render_goal());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn coverage_matches_sampling_oracle(
        dx in -0.15..0.15f64, dy in -0.15..0.15f64, da in -PI..PI,
        bscale in 0.75..1.25f64, gscale in 0.75..1.25f64, l_shape in any::<bool>(),
    ) {
        let shape = if l_shape { BlockShape::L } else { BlockShape::T };
        let goal = Pose { position: Vec2::new(0.5, 0.5), angle: 0.3 };
        let block = Pose { position: Vec2::new(0.5 + dx, 0.5 + dy), angle: 0.3 + da };
        let got = push_t::coverage(shape, block, bscale, goal, gscale);
        let oracle = coverage_oracle(shape, block, bscale, goal, gscale, 300);
        prop_assert!((got - oracle).abs() < 1e-2, "{} vs {}", got, oracle);
    }

    #[test]
    fn two_room_agent_stays_out_of_walls(seed in any::<u64>()) {
        let mut env = TwoRoom::new(config(8));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut episode = 0u64;
        let a = sample_all(&env, seed);
        env.reset(seed, &a).unwrap();
        for _ in 0..1500 {
            while env.is_done() {
                episode += 1;
                let a = sample_all(&env, seed.wrapping_add(episode));
                env.reset(seed.wrapping_add(episode), &a).unwrap();
            }
            let act = [rng.random_range(-1.0..=1.0f32), rng.random_range(-1.0..=1.0f32)];
            env.step(&act).unwrap();
            let s = env.state();
            let p = Vec2::new(s[0] as f64, s[1] as f64);
            let layout = env.layout();
            // States are exported as f32; allow that much slack at the wall face.
            for wall in layout.blocked().map(|w| w.expanded(-1e-6)) {
                prop_assert!(!wall.contains_open(p), "agent {:?} inside grown wall {:?}", p, wall);
            }
            let (lo, hi) = layout.arena_bounds();
            prop_assert!(p.x >= lo - 1e-6 && p.x <= hi + 1e-6 && p.y >= lo - 1e-6 && p.y <= hi + 1e-6);
        }
    }

    #[test]
    fn push_t_block_never_outruns_agent(seed in any::<u64>()) {
        let mut env = PushT::new(config(8));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut episode = 0u64;
        let a = sample_all(&env, seed);
        env.reset(seed, &a).unwrap();
        for _ in 0..1500 {
            while env.is_done() {
                episode += 1;
                let a = sample_all(&env, seed.wrapping_add(episode));
                env.reset(seed.wrapping_add(episode), &a).unwrap();
            }
            let before = env.state();
            // Bias toward the block so contacts actually happen.
            let to_block = Vec2::new((before[4] - before[0]) as f64, (before[5] - before[1]) as f64).normalized();
            let noise = Vec2::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
            let act = (to_block + noise).cap(1.0);
            env.step(&[act.x as f32, act.y as f32]).unwrap();
            let after = env.state();
            let agent = ((after[0] - before[0]) as f64).hypot((after[1] - before[1]) as f64);
            let block = ((after[4] - before[4]) as f64).hypot((after[5] - before[5]) as f64);
            prop_assert!(block <= agent + PENETRATION_TOLERANCE, "block {} agent {}", block, agent);
            for &v in &[after[0], after[1], after[4], after[5]] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
