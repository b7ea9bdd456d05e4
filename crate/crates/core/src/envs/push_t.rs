//! `swm/PushT-v1`: a disc agent pushes a T-shaped block onto a goal anchor.
//!
//! Actions in `[-1, 1]²` are desired agent displacements, scaled by
//! [`MAX_DISPLACEMENT`] and capped at `MAX_DISPLACEMENT · agent.velocity`.
//! Contact is quasi-static: the block carries no momentum and is moved only
//! as far as needed to clear the agent. A contact off the block's centroid
//! also turns the block, scaled by [`FRICTION`]. The block can never travel
//! further in one step than the agent did.

use std::f64::consts::{FRAC_PI_4, PI};

use ndarray::Array3;

use super::geometry::{
    area, centroid, circle_convex_contact, convex_intersection_area, wrap_angle, Contact, Rect, Vec2,
};
use super::raster::{rgb, Canvas};
use super::{
    check_action, check_assignment, point, real, ActionSpec, Env, EnvConfig, EnvError, StepOutcome, PUSH_T_ID,
};
use crate::variation::{Assignment, Domain, Value, VariationSpace};

/// Agent radius at `agent.scale = 1`.
pub const AGENT_RADIUS: f64 = 0.03;
/// Displacement per unit action at `agent.velocity = 1`; also the speed cap.
pub const MAX_DISPLACEMENT: f64 = 0.03;
/// Share of an off-center push that turns the block.
pub const FRICTION: f64 = 0.6;
/// Rotation limit per step, radians.
pub const MAX_ROTATION: f64 = 0.1;
/// Goal-area fraction the block must cover for success.
pub const SUCCESS_COVERAGE: f64 = 0.9;
/// Residual overlap allowed after contact resolution.
pub const PENETRATION_TOLERANCE: f64 = 0.01;
pub const MAX_STEPS: usize = 300;
const SETTLE_HALVINGS: usize = 6;
pub const STATE_DIM: usize = 10;

const CONTACT_ITERATIONS: usize = 8;
const TASK_LEAVES: &[&str] = &[
    "agent.start_position",
    "block.start_position",
    "goal.angle",
    "goal.position",
];

pub fn variation_space() -> VariationSpace {
    let mut s = VariationSpace::new();
    let angle = || Domain::interval(-PI, PI);
    s.register("agent.angle", angle(), Value::real(0.0))
        .and_then(|s| s.register("agent.color", Domain::rgb(), Value::Int(vec![65, 105, 225])))
        .and_then(|s| s.register("agent.scale", Domain::interval(0.5, 2.0), Value::real(1.0)))
        .and_then(|s| {
            s.register(
                "agent.shape",
                Domain::categorical(&["circle", "square"]),
                Value::choice("circle"),
            )
        })
        .and_then(|s| {
            s.register(
                "agent.start_position",
                Domain::boxed(&[0.1, 0.1], &[0.9, 0.9]),
                Value::Real(vec![0.2, 0.2]),
            )
        })
        .and_then(|s| s.register("agent.velocity", Domain::interval(0.5, 2.0), Value::real(1.0)))
        .and_then(|s| s.register("background.color", Domain::rgb(), Value::Int(vec![255, 255, 255])))
        .and_then(|s| s.register("block.angle", angle(), Value::real(0.0)))
        .and_then(|s| s.register("block.color", Domain::rgb(), Value::Int(vec![119, 136, 153])))
        .and_then(|s| s.register("block.scale", Domain::interval(0.75, 1.25), Value::real(1.0)))
        .and_then(|s| s.register("block.shape", Domain::categorical(&["T", "L"]), Value::choice("T")))
        .and_then(|s| {
            s.register(
                "block.start_position",
                Domain::boxed(&[0.25, 0.25], &[0.75, 0.75]),
                Value::Real(vec![0.6, 0.4]),
            )
        })
        .and_then(|s| s.register("goal.angle", angle(), Value::real(FRAC_PI_4)))
        .and_then(|s| s.register("goal.color", Domain::rgb(), Value::Int(vec![144, 238, 144])))
        .and_then(|s| {
            s.register(
                "goal.position",
                Domain::boxed(&[0.3, 0.3], &[0.7, 0.7]),
                Value::Real(vec![0.5, 0.5]),
            )
        })
        .and_then(|s| s.register("goal.scale", Domain::interval(0.75, 1.25), Value::real(1.0)))
        .expect("static catalog is valid");
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockShape {
    T,
    L,
}

impl BlockShape {
    fn from_assignment(a: &Assignment) -> Self {
        match a.get("block.shape").and_then(|v| v.as_choice()) {
            Some("L") => BlockShape::L,
            _ => BlockShape::T,
        }
    }

    /// Convex pieces at unit scale, shifted so the area centroid is the origin.
    pub fn pieces(self) -> Vec<Vec<Vec2>> {
        let rects = match self {
            BlockShape::T => [Rect::new(-0.12, 0.0, 0.12, 0.06), Rect::new(-0.03, -0.18, 0.03, 0.0)],
            BlockShape::L => [Rect::new(-0.03, -0.12, 0.03, 0.12), Rect::new(0.03, -0.12, 0.15, -0.06)],
        };
        let pieces: Vec<Vec<Vec2>> = rects.iter().map(Rect::corners).collect();
        let total: f64 = pieces.iter().map(|p| area(p)).sum();
        let mut c = Vec2::ZERO;
        for p in &pieces {
            c += centroid(p) * (area(p) / total);
        }
        pieces
            .into_iter()
            .map(|p| p.into_iter().map(|v| v - c).collect())
            .collect()
    }

    /// Squared radius of gyration about the centroid at unit scale.
    pub fn gyration2(self) -> f64 {
        let pieces = self.pieces();
        let total: f64 = pieces.iter().map(|p| area(p)).sum();
        pieces
            .iter()
            .map(|p| {
                let (w, h) = ((p[1] - p[0]).norm(), (p[2] - p[1]).norm());
                let c = centroid(p);
                area(p) * ((w * w + h * h) / 12.0 + c.dot(c))
            })
            .sum::<f64>()
            / total
    }

    /// Largest vertex distance from the centroid at unit scale.
    pub fn circumradius(self) -> f64 {
        self.pieces().iter().flatten().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec2,
    pub angle: f64,
}

/// World-frame convex pieces of a shape placed at `pose` with `scale`.
pub fn placed_pieces(shape: BlockShape, pose: Pose, scale: f64) -> Vec<Vec<Vec2>> {
    shape
        .pieces()
        .into_iter()
        .map(|p| {
            p.into_iter()
                .map(|v| (v * scale).rotate(pose.angle) + pose.position)
                .collect()
        })
        .collect()
}

/// Fraction of the goal region covered by the block.
pub fn coverage(shape: BlockShape, block: Pose, block_scale: f64, goal: Pose, goal_scale: f64) -> f64 {
    let b = placed_pieces(shape, block, block_scale);
    let g = placed_pieces(shape, goal, goal_scale);
    let goal_area: f64 = g.iter().map(|p| area(p)).sum();
    let inter: f64 = b
        .iter()
        .flat_map(|bp| g.iter().map(move |gp| convex_intersection_area(bp, gp)))
        .sum();
    inter / goal_area
}

#[derive(Debug, Clone)]
struct Params {
    agent_radius: f64,
    max_step: f64,
    agent_angle: f64,
    agent_square: bool,
    shape: BlockShape,
    block_scale: f64,
    goal_scale: f64,
    colors: [[u8; 3]; 4],
}

impl Params {
    fn from_assignment(a: &Assignment) -> Self {
        Self {
            agent_radius: AGENT_RADIUS * real(a, "agent.scale"),
            max_step: MAX_DISPLACEMENT * real(a, "agent.velocity"),
            agent_angle: real(a, "agent.angle"),
            agent_square: a.get("agent.shape").and_then(|v| v.as_choice()) == Some("square"),
            shape: BlockShape::from_assignment(a),
            block_scale: real(a, "block.scale"),
            goal_scale: real(a, "goal.scale"),
            colors: [
                rgb(a.get("background.color")),
                rgb(a.get("goal.color")),
                rgb(a.get("block.color")),
                rgb(a.get("agent.color")),
            ],
        }
    }
}

#[derive(Debug, Clone)]
struct Dynamic {
    agent: Vec2,
    velocity: Vec2,
    block: Pose,
    goal: Pose,
    done: bool,
}

#[derive(Clone)]
pub struct PushT {
    config: EnvConfig,
    space: VariationSpace,
    params: Params,
    dynamic: Option<Dynamic>,
    seed: u64,
}

impl PushT {
    pub fn new(config: EnvConfig) -> Self {
        let space = variation_space();
        let params = Params::from_assignment(&space.defaults());
        Self {
            config,
            space,
            params,
            dynamic: None,
            seed: 0,
        }
    }

    pub fn agent_radius(&self) -> f64 {
        self.params.agent_radius
    }

    pub fn block_shape(&self) -> BlockShape {
        self.params.shape
    }

    pub fn block_scale(&self) -> f64 {
        self.params.block_scale
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Block coverage of the goal region in the current state.
    pub fn coverage(&self) -> f64 {
        let d = self.dynamic();
        coverage(
            self.params.shape,
            d.block,
            self.params.block_scale,
            d.goal,
            self.params.goal_scale,
        )
    }

    fn dynamic(&self) -> &Dynamic {
        self.dynamic.as_ref().expect("PushT used before reset")
    }

    fn deepest_contact(&self, agent: Vec2, block: Pose) -> Option<Contact> {
        placed_pieces(self.params.shape, block, self.params.block_scale)
            .iter()
            .filter_map(|p| circle_convex_contact(agent, self.params.agent_radius, p))
            .max_by(|a, b| a.depth.total_cmp(&b.depth))
    }

    /// Pushes the agent out of the block, then back into the arena.
    fn separate_agent(&self, mut agent: Vec2, block: Pose) -> Vec2 {
        let (lo, hi) = (self.params.agent_radius, 1.0 - self.params.agent_radius);
        for _ in 0..CONTACT_ITERATIONS {
            match self.deepest_contact(agent, block) {
                Some(c) if c.depth > 1e-12 => agent += c.normal * c.depth,
                _ => break,
            }
        }
        Vec2::new(agent.x.clamp(lo, hi), agent.y.clamp(lo, hi))
    }

    /// Separates the agent from the pushed block. Separation can hand back
    /// part of the agent's motion; the push is then halved until the block
    /// moves no further than the agent did, down to no push at all.
    fn settle(&self, start: Vec2, target: Vec2, from: Pose, to: Pose) -> (Pose, Vec2) {
        let mut f = 1.0;
        for _ in 0..SETTLE_HALVINGS {
            let block = Pose {
                position: from.position + (to.position - from.position) * f,
                angle: wrap_angle(from.angle + wrap_angle(to.angle - from.angle) * f),
            };
            let agent = self.separate_agent(target, block);
            if (block.position - from.position).norm() <= (agent - start).norm() + PENETRATION_TOLERANCE {
                return (block, agent);
            }
            f *= 0.5;
        }
        (from, self.separate_agent(target, from))
    }

    fn success_of(&self, d: &Dynamic) -> bool {
        coverage(
            self.params.shape,
            d.block,
            self.params.block_scale,
            d.goal,
            self.params.goal_scale,
        ) >= SUCCESS_COVERAGE
    }

    fn draw(&self, agent: Vec2, block: Pose, goal: Pose) -> Array3<u8> {
        let p = &self.params;
        let [bg, goal_color, block_color, agent_color] = p.colors;
        let mut canvas = Canvas::new(self.config.image_size, bg);
        for piece in placed_pieces(p.shape, goal, p.goal_scale) {
            canvas.fill_convex(&piece, goal_color);
        }
        for piece in placed_pieces(p.shape, block, p.block_scale) {
            canvas.fill_convex(&piece, block_color);
        }
        if p.agent_square {
            let r = p.agent_radius;
            let square: Vec<Vec2> = Rect::new(-r, -r, r, r)
                .corners()
                .into_iter()
                .map(|v| v.rotate(p.agent_angle) + agent)
                .collect();
            canvas.fill_convex(&square, agent_color);
        } else {
            canvas.fill_circle(agent, p.agent_radius, agent_color);
        }
        canvas.into_pixels()
    }
}

impl Env for PushT {
    fn id(&self) -> &'static str {
        PUSH_T_ID
    }

    fn variation_space(&self) -> &VariationSpace {
        &self.space
    }

    fn action_spec(&self) -> ActionSpec {
        ActionSpec::symmetric(2, 1.0)
    }

    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn image_size(&self) -> usize {
        self.config.image_size
    }

    fn max_steps(&self) -> usize {
        MAX_STEPS
    }

    fn task_leaves(&self) -> &'static [&'static str] {
        TASK_LEAVES
    }

    fn reset(&mut self, seed: u64, assignment: &Assignment) -> Result<(), EnvError> {
        check_assignment(&self.space, assignment)?;
        self.space
            .set_values(assignment)
            .map_err(|_| EnvError::InvalidAssignment(self.space.validate(assignment)))?;
        self.params = Params::from_assignment(assignment);
        self.seed = seed;
        let block = Pose {
            position: point(assignment, "block.start_position"),
            angle: real(assignment, "block.angle"),
        };
        let goal = Pose {
            position: point(assignment, "goal.position"),
            angle: real(assignment, "goal.angle"),
        };
        let agent = self.separate_agent(point(assignment, "agent.start_position"), block);
        let mut d = Dynamic {
            agent,
            velocity: Vec2::ZERO,
            block,
            goal,
            done: false,
        };
        d.done = self.success_of(&d);
        self.dynamic = Some(d);
        Ok(())
    }

    fn step(&mut self, action: &[f32]) -> Result<StepOutcome, EnvError> {
        let action = check_action(&self.action_spec(), action)?;
        let d = self.dynamic.as_ref().ok_or(EnvError::NotReset)?;
        if d.done {
            return Err(EnvError::EpisodeOver);
        }
        let p = &self.params;
        let (lo, hi) = (p.agent_radius, 1.0 - p.agent_radius);
        let start = d.agent;
        let displacement = (Vec2::new(action[0] as f64, action[1] as f64) * MAX_DISPLACEMENT).cap(p.max_step);
        let target = start + displacement;
        let agent = Vec2::new(target.x.clamp(lo, hi), target.y.clamp(lo, hi));

        // Quasi-static push: the block gives way along the contact normal,
        // never further in total than the agent moved.
        let mut block = d.block;
        let mut budget = (agent - start).norm();
        let gyration2 = p.shape.gyration2() * p.block_scale * p.block_scale;
        for _ in 0..CONTACT_ITERATIONS {
            if budget <= 0.0 {
                break;
            }
            let Some(c) = self.deepest_contact(agent, block) else {
                break;
            };
            if c.depth <= 1e-12 {
                break;
            }
            let push = -c.normal * c.depth.min(budget);
            let lever = c.point - block.position;
            let turn =
                (FRICTION * lever.cross(push) / (lever.dot(lever) + gyration2)).clamp(-MAX_ROTATION, MAX_ROTATION);
            block.position += push;
            block.angle = wrap_angle(block.angle + turn);
            budget -= push.norm();
        }
        block.position = Vec2::new(block.position.x.clamp(0.0, 1.0), block.position.y.clamp(0.0, 1.0));
        let (block, agent) = self.settle(start, agent, d.block, block);

        let mut next = Dynamic {
            agent,
            velocity: agent - start,
            block,
            goal: d.goal,
            done: false,
        };
        let success = self.success_of(&next);
        next.done = success;
        self.dynamic = Some(next);
        Ok(StepOutcome { success, done: success })
    }

    fn state(&self) -> Vec<f32> {
        let d = self.dynamic();
        [
            d.agent.x,
            d.agent.y,
            d.velocity.x,
            d.velocity.y,
            d.block.position.x,
            d.block.position.y,
            d.block.angle,
            d.goal.position.x,
            d.goal.position.y,
            d.goal.angle,
        ]
        .iter()
        .map(|&v| v as f32)
        .collect()
    }

    fn set_state(&mut self, state: &[f32]) -> Result<(), EnvError> {
        if state.len() != STATE_DIM {
            return Err(EnvError::StateShape {
                expected: STATE_DIM,
                got: state.len(),
            });
        }
        if self.dynamic.is_none() {
            return Err(EnvError::NotReset);
        }
        let s: Vec<f64> = state.iter().map(|&v| v as f64).collect();
        let mut d = Dynamic {
            agent: Vec2::new(s[0], s[1]),
            velocity: Vec2::new(s[2], s[3]),
            block: Pose {
                position: Vec2::new(s[4], s[5]),
                angle: s[6],
            },
            goal: Pose {
                position: Vec2::new(s[7], s[8]),
                angle: s[9],
            },
            done: false,
        };
        d.done = self.success_of(&d);
        self.dynamic = Some(d);
        Ok(())
    }

    fn goal_state(&self) -> Vec<f32> {
        let d = self.dynamic();
        let g = d.goal;
        [
            d.agent.x,
            d.agent.y,
            0.0,
            0.0,
            g.position.x,
            g.position.y,
            g.angle,
            g.position.x,
            g.position.y,
            g.angle,
        ]
        .iter()
        .map(|&v| v as f32)
        .collect()
    }

    fn set_goal_from_state(&mut self, state: &[f32]) -> Result<(), EnvError> {
        if state.len() != STATE_DIM {
            return Err(EnvError::StateShape {
                expected: STATE_DIM,
                got: state.len(),
            });
        }
        let goal = Pose {
            position: Vec2::new(state[4] as f64, state[5] as f64),
            angle: state[6] as f64,
        };
        let mut d = self.dynamic.clone().ok_or(EnvError::NotReset)?;
        d.goal = goal;
        d.done = self.success_of(&d);
        self.dynamic = Some(d);
        Ok(())
    }

    fn is_success(&self) -> bool {
        self.dynamic.as_ref().is_some_and(|d| self.success_of(d))
    }

    fn is_done(&self) -> bool {
        self.dynamic.as_ref().is_some_and(|d| d.done)
    }

    fn render(&self) -> Array3<u8> {
        let d = self.dynamic();
        self.draw(d.agent, d.block, d.goal)
    }

    fn render_goal(&self) -> Array3<u8> {
        let d = self.dynamic();
        self.draw(d.agent, d.goal, d.goal)
    }

    fn goal_distance(&self) -> f64 {
        let d = self.dynamic();
        let reach = self.params.shape.circumradius() * self.params.block_scale + self.params.agent_radius;
        (d.block.position - d.goal.position).norm()
            + 0.05 * wrap_angle(d.block.angle - d.goal.angle).abs()
            + 0.1 * ((d.agent - d.block.position).norm() - reach).max(0.0)
    }

    fn boxed_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(size: usize) -> PushT {
        let mut e = PushT::new(EnvConfig { image_size: size });
        let d = e.variation_space().defaults();
        e.reset(0, &d).unwrap();
        e
    }

    #[test]
    fn catalog_has_sixteen_leaves() {
        assert_eq!(variation_space().len(), 16);
    }

    #[test]
    fn pieces_are_centered() {
        for shape in [BlockShape::T, BlockShape::L] {
            let pieces = shape.pieces();
            let total: f64 = pieces.iter().map(|p| area(p)).sum();
            let mut c = Vec2::ZERO;
            for p in &pieces {
                c += centroid(p) * (area(p) / total);
            }
            assert!(c.norm() < 1e-12);
        }
    }

    #[test]
    fn block_at_goal_pose_is_success() {
        let mut e = env(32);
        let mut s = e.state();
        s[4] = s[7];
        s[5] = s[8];
        s[6] = s[9];
        e.set_state(&s).unwrap();
        assert!((e.coverage() - 1.0).abs() < 1e-9);
        assert!(e.is_success());
    }

    #[test]
    fn far_agent_does_not_move_block() {
        let mut e = env(32);
        let before = e.state();
        let reach = BlockShape::T.circumradius() + AGENT_RADIUS;
        let agent = Vec2::new(before[0] as f64, before[1] as f64);
        let block = Vec2::new(before[4] as f64, before[5] as f64);
        assert!((agent - block).norm() > reach + MAX_DISPLACEMENT * 2.0);
        e.step(&[1.0, 1.0]).unwrap();
        let after = e.state();
        assert_eq!(&before[4..7], &after[4..7]);
    }

    #[test]
    fn pushing_moves_block_no_further_than_agent() {
        let mut e = env(32);
        // Agent just left of the block, pushing right.
        let s = e.state();
        let mut s2 = s.clone();
        s2[0] = s[4] - 0.2;
        s2[1] = s[5] + 0.05;
        e.set_state(&s2).unwrap();
        let mut moved = false;
        for _ in 0..20 {
            let a = e.state();
            e.step(&[1.0, 0.0]).unwrap();
            let b = e.state();
            let agent_step = ((b[0] - a[0]).hypot(b[1] - a[1])) as f64;
            let block_step = ((b[4] - a[4]).hypot(b[5] - a[5])) as f64;
            assert!(block_step <= agent_step + PENETRATION_TOLERANCE);
            moved |= block_step > 0.0;
        }
        assert!(moved);
    }
}
