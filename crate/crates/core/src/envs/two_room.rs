//! `swm/TwoRoom-v1`: a disc agent navigates through door gaps in a divider
//! wall to reach a circular goal.
//!
//! Actions are velocity commands in `[-1, 1]²`, scaled by `agent.speed` and
//! norm-capped at it. Walls are impermeable: motion is resolved one axis at
//! a time against the wall rectangles grown by the agent radius, so the
//! agent center never enters a wall. `agent.max_energy` is a travel budget;
//! the episode ends once it is spent.

use ndarray::Array3;

use super::geometry::{Rect, Vec2};
use super::raster::{rgb, Canvas, Rgb};
use super::{
    check_action, check_assignment, point, real, ActionSpec, Env, EnvConfig, EnvError, StepOutcome, TWO_ROOM_ID,
};
use crate::variation::{Assignment, Domain, Value, VariationSpace};

/// Thickness of the arena frame.
pub const BORDER: f64 = 0.02;
/// Divider wall center line (both axes).
pub const WALL_CENTER: f64 = 0.5;
/// Spacing between consecutive door centers when `door.number > 1`.
pub const DOOR_SPACING: f64 = 0.25;
pub const MAX_STEPS: usize = 200;
pub const STATE_DIM: usize = 5;

const TASK_LEAVES: &[&str] = &["agent.position", "goal.position"];

pub fn variation_space() -> VariationSpace {
    let mut s = VariationSpace::new();
    let pos = || Domain::boxed(&[0.05, 0.05], &[0.95, 0.95]);
    s.register("agent.color", Domain::rgb(), Value::Int(vec![255, 0, 0]))
        .and_then(|s| s.register("agent.max_energy", Domain::interval(1.0, 4.0), Value::real(4.0)))
        .and_then(|s| s.register("agent.position", pos(), Value::Real(vec![0.2, 0.3])))
        .and_then(|s| s.register("agent.radius", Domain::interval(0.015, 0.04), Value::real(0.025)))
        .and_then(|s| s.register("agent.speed", Domain::interval(0.015, 0.045), Value::real(0.03)))
        .and_then(|s| s.register("background.color", Domain::rgb(), Value::Int(vec![245, 245, 245])))
        .and_then(|s| s.register("door.color", Domain::rgb(), Value::Int(vec![200, 180, 140])))
        .and_then(|s| s.register("door.number", Domain::int_range(1, 3), Value::int(1)))
        .and_then(|s| s.register("door.position", Domain::interval(0.2, 0.8), Value::real(0.5)))
        .and_then(|s| s.register("door.size", Domain::interval(0.12, 0.3), Value::real(0.2)))
        .and_then(|s| s.register("goal.color", Domain::rgb(), Value::Int(vec![0, 200, 0])))
        .and_then(|s| s.register("goal.position", pos(), Value::Real(vec![0.8, 0.7])))
        .and_then(|s| s.register("goal.radius", Domain::interval(0.02, 0.06), Value::real(0.04)))
        .and_then(|s| {
            s.register(
                "wall.axis",
                Domain::categorical(&["vertical", "horizontal"]),
                Value::choice("vertical"),
            )
        })
        .and_then(|s| s.register("wall.border_color", Domain::rgb(), Value::Int(vec![30, 30, 30])))
        .and_then(|s| s.register("wall.color", Domain::rgb(), Value::Int(vec![90, 90, 90])))
        .and_then(|s| s.register("wall.thickness", Domain::interval(0.02, 0.08), Value::real(0.04)))
        .expect("static catalog is valid");
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WallAxis {
    /// Divider runs top to bottom; rooms are left and right.
    Vertical,
    /// Divider runs left to right; rooms are bottom and top.
    Horizontal,
}

/// Geometry and physical constants derived from an assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub axis: WallAxis,
    pub thickness: f64,
    pub agent_radius: f64,
    pub speed: f64,
    pub max_energy: f64,
    pub goal_radius: f64,
    /// Door gaps as `[lo, hi]` intervals along the wall.
    pub doors: Vec<(f64, f64)>,
    /// Solid wall pieces.
    pub walls: Vec<Rect>,
    colors: Colors,
}

#[derive(Debug, Clone, PartialEq)]
struct Colors {
    agent: Rgb,
    background: Rgb,
    door: Rgb,
    goal: Rgb,
    border: Rgb,
    wall: Rgb,
}

impl Layout {
    pub fn from_assignment(a: &Assignment) -> Self {
        let axis = match a.get("wall.axis").and_then(|v| v.as_choice()) {
            Some("horizontal") => WallAxis::Horizontal,
            _ => WallAxis::Vertical,
        };
        let thickness = real(a, "wall.thickness");
        let size = real(a, "door.size");
        let count = a
            .get("door.number")
            .and_then(|v| v.as_ints())
            .and_then(|v| v.first().copied())
            .unwrap_or(1)
            .max(1) as usize;
        let position = real(a, "door.position");
        let (lo, hi) = (BORDER + size / 2.0, 1.0 - BORDER - size / 2.0);
        let mut doors: Vec<(f64, f64)> = (0..count)
            .map(|i| {
                let c = (position + (i as f64 - (count as f64 - 1.0) / 2.0) * DOOR_SPACING).clamp(lo, hi);
                (c - size / 2.0, c + size / 2.0)
            })
            .collect();
        doors.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for d in doors {
            match merged.last_mut() {
                Some(last) if d.0 <= last.1 => last.1 = last.1.max(d.1),
                _ => merged.push(d),
            }
        }

        let mut walls = Vec::new();
        let mut start = BORDER;
        let (u0, u1) = (WALL_CENTER - thickness / 2.0, WALL_CENTER + thickness / 2.0);
        let mut push = |from: f64, to: f64| {
            if to > from {
                walls.push(match axis {
                    WallAxis::Vertical => Rect::new(u0, from, u1, to),
                    WallAxis::Horizontal => Rect::new(from, u0, to, u1),
                });
            }
        };
        for &(dlo, dhi) in &merged {
            push(start, dlo);
            start = dhi;
        }
        push(start, 1.0 - BORDER);

        Self {
            axis,
            thickness,
            agent_radius: real(a, "agent.radius"),
            speed: real(a, "agent.speed"),
            max_energy: real(a, "agent.max_energy"),
            goal_radius: real(a, "goal.radius"),
            doors: merged,
            walls,
            colors: Colors {
                agent: rgb(a.get("agent.color")),
                background: rgb(a.get("background.color")),
                door: rgb(a.get("door.color")),
                goal: rgb(a.get("goal.color")),
                border: rgb(a.get("wall.border_color")),
                wall: rgb(a.get("wall.color")),
            },
        }
    }

    /// `(across, along)` coordinates relative to the wall.
    pub fn to_wall_frame(&self, p: Vec2) -> (f64, f64) {
        match self.axis {
            WallAxis::Vertical => (p.x, p.y),
            WallAxis::Horizontal => (p.y, p.x),
        }
    }

    pub fn from_wall_frame(&self, across: f64, along: f64) -> Vec2 {
        match self.axis {
            WallAxis::Vertical => Vec2::new(across, along),
            WallAxis::Horizontal => Vec2::new(along, across),
        }
    }

    /// Agent-center bounds along either axis.
    pub fn arena_bounds(&self) -> (f64, f64) {
        (BORDER + self.agent_radius, 1.0 - BORDER - self.agent_radius)
    }

    /// Wall rectangles grown by the agent radius: the region the agent
    /// center must stay out of.
    pub fn blocked(&self) -> impl Iterator<Item = Rect> + '_ {
        self.walls.iter().map(|w| w.expanded(self.agent_radius))
    }

    /// Door gap range reachable by the agent center, per door.
    pub fn door_passages(&self) -> Vec<(f64, f64)> {
        let r = self.agent_radius;
        self.doors
            .iter()
            .map(|&(lo, hi)| {
                let (a, b) = (lo + r, hi - r);
                if a <= b {
                    (a, b)
                } else {
                    let m = 0.5 * (lo + hi);
                    (m, m)
                }
            })
            .collect()
    }

    /// Moves a point out of the walls and into the arena.
    pub fn place(&self, p: Vec2) -> Vec2 {
        let (lo, hi) = self.arena_bounds();
        let mut q = Vec2::new(p.x.clamp(lo, hi), p.y.clamp(lo, hi));
        for e in self.blocked() {
            if e.contains_open(q) {
                q = match self.axis {
                    WallAxis::Vertical => Vec2::new(if q.x - e.x0 < e.x1 - q.x { e.x0 } else { e.x1 }, q.y),
                    WallAxis::Horizontal => Vec2::new(q.x, if q.y - e.y0 < e.y1 - q.y { e.y0 } else { e.y1 }),
                };
            }
        }
        q
    }

    /// Resolves a displacement against walls and arena bounds, one axis at a time.
    pub fn sweep(&self, from: Vec2, delta: Vec2) -> Vec2 {
        let (lo, hi) = self.arena_bounds();
        let mut x = from.x + delta.x;
        for e in self.blocked() {
            if e.y0 < from.y && from.y < e.y1 {
                if delta.x > 0.0 && from.x <= e.x0 && x > e.x0 {
                    x = e.x0;
                } else if delta.x < 0.0 && from.x >= e.x1 && x < e.x1 {
                    x = e.x1;
                }
            }
        }
        let x = x.clamp(lo, hi);
        let mut y = from.y + delta.y;
        for e in self.blocked() {
            if e.x0 < x && x < e.x1 {
                if delta.y > 0.0 && from.y <= e.y0 && y > e.y0 {
                    y = e.y0;
                } else if delta.y < 0.0 && from.y >= e.y1 && y < e.y1 {
                    y = e.y1;
                }
            }
        }
        Vec2::new(x, y.clamp(lo, hi))
    }

    /// Which room a point is in: `-1` before the wall, `1` after it.
    pub fn side(&self, p: Vec2) -> i8 {
        if self.to_wall_frame(p).0 < WALL_CENTER {
            -1
        } else {
            1
        }
    }

    /// Shortest path length between two free points, routing through the
    /// best door when they lie in different rooms.
    pub fn path_length(&self, a: Vec2, b: Vec2) -> f64 {
        if self.side(a) == self.side(b) {
            return (a - b).norm();
        }
        self.door_passages()
            .iter()
            .map(|&(lo, hi)| {
                let q = self.crossing(a, b, lo, hi);
                (a - q).norm() + (q - b).norm()
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Point where the a→b path crosses the wall center line inside a passage.
    pub fn crossing(&self, a: Vec2, b: Vec2, lo: f64, hi: f64) -> Vec2 {
        let (ua, wa) = self.to_wall_frame(a);
        let (ub, wb) = self.to_wall_frame(b);
        let t = if ub != ua { (WALL_CENTER - ua) / (ub - ua) } else { 0.5 };
        let w = (wa + t * (wb - wa)).clamp(lo, hi);
        self.from_wall_frame(WALL_CENTER, w)
    }
}

#[derive(Debug, Clone)]
struct Dynamic {
    agent: Vec2,
    energy: f64,
    goal: Vec2,
    done: bool,
}

#[derive(Clone)]
pub struct TwoRoom {
    config: EnvConfig,
    space: VariationSpace,
    layout: Layout,
    dynamic: Option<Dynamic>,
    seed: u64,
}

impl TwoRoom {
    pub fn new(config: EnvConfig) -> Self {
        let space = variation_space();
        let layout = Layout::from_assignment(&space.defaults());
        Self {
            config,
            space,
            layout,
            dynamic: None,
            seed: 0,
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn dynamic(&self) -> &Dynamic {
        self.dynamic.as_ref().expect("TwoRoom used before reset")
    }

    fn success_at(&self, agent: Vec2, goal: Vec2) -> bool {
        (agent - goal).norm() <= self.layout.goal_radius
    }

    fn draw(&self, agent: Vec2, goal: Vec2) -> Array3<u8> {
        let l = &self.layout;
        let c = &l.colors;
        let mut canvas = Canvas::new(self.config.image_size, c.border);
        canvas.fill_rect(BORDER, BORDER, 1.0 - BORDER, 1.0 - BORDER, c.background);
        for w in &l.walls {
            canvas.fill_rect(w.x0, w.y0, w.x1, w.y1, c.wall);
        }
        let (u0, u1) = (WALL_CENTER - l.thickness / 2.0, WALL_CENTER + l.thickness / 2.0);
        for &(lo, hi) in &l.doors {
            let (p, q) = (l.from_wall_frame(u0, lo), l.from_wall_frame(u1, hi));
            canvas.fill_rect(p.x.min(q.x), p.y.min(q.y), p.x.max(q.x), p.y.max(q.y), c.door);
        }
        canvas.fill_circle(goal, l.goal_radius, c.goal);
        canvas.fill_circle(agent, l.agent_radius, c.agent);
        canvas.into_pixels()
    }
}

impl Env for TwoRoom {
    fn id(&self) -> &'static str {
        TWO_ROOM_ID
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
        self.layout = Layout::from_assignment(assignment);
        self.seed = seed;
        let agent = self.layout.place(point(assignment, "agent.position"));
        let goal = self.layout.place(point(assignment, "goal.position"));
        self.dynamic = Some(Dynamic {
            agent,
            energy: self.layout.max_energy,
            goal,
            done: self.success_at(agent, goal),
        });
        Ok(())
    }

    fn step(&mut self, action: &[f32]) -> Result<StepOutcome, EnvError> {
        let action = check_action(&self.action_spec(), action)?;
        let layout = &self.layout;
        let d = self.dynamic.as_ref().ok_or(EnvError::NotReset)?;
        if d.done {
            return Err(EnvError::EpisodeOver);
        }
        let velocity = (Vec2::new(action[0] as f64, action[1] as f64) * layout.speed)
            .cap(layout.speed)
            .cap(d.energy);
        let agent = layout.sweep(d.agent, velocity);
        let moved = (agent - d.agent).norm();
        let mut energy = d.energy - moved;
        if energy < 1e-12 {
            energy = 0.0;
        }
        let goal = d.goal;
        let success = self.success_at(agent, goal);
        let done = success || energy <= 0.0;
        self.dynamic = Some(Dynamic {
            agent,
            energy,
            goal,
            done,
        });
        Ok(StepOutcome { success, done })
    }

    fn state(&self) -> Vec<f32> {
        let d = self.dynamic();
        vec![
            d.agent.x as f32,
            d.agent.y as f32,
            d.energy as f32,
            d.goal.x as f32,
            d.goal.y as f32,
        ]
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
        // f32 round-off can land a contact position a hair inside a wall.
        let agent = self.layout.place(Vec2::new(state[0] as f64, state[1] as f64));
        let energy = (state[2] as f64).max(0.0);
        let goal = Vec2::new(state[3] as f64, state[4] as f64);
        let done = self.success_at(agent, goal) || energy <= 0.0;
        self.dynamic = Some(Dynamic {
            agent,
            energy,
            goal,
            done,
        });
        Ok(())
    }

    fn goal_state(&self) -> Vec<f32> {
        let d = self.dynamic();
        vec![
            d.goal.x as f32,
            d.goal.y as f32,
            d.energy as f32,
            d.goal.x as f32,
            d.goal.y as f32,
        ]
    }

    fn set_goal_from_state(&mut self, state: &[f32]) -> Result<(), EnvError> {
        if state.len() != STATE_DIM {
            return Err(EnvError::StateShape {
                expected: STATE_DIM,
                got: state.len(),
            });
        }
        let goal = Vec2::new(state[0] as f64, state[1] as f64);
        let d = self.dynamic.as_ref().ok_or(EnvError::NotReset)?;
        let done = self.success_at(d.agent, goal) || d.energy <= 0.0;
        self.dynamic = Some(Dynamic {
            goal,
            done,
            ..d.clone()
        });
        Ok(())
    }

    fn is_success(&self) -> bool {
        self.dynamic.as_ref().is_some_and(|d| self.success_at(d.agent, d.goal))
    }

    fn is_done(&self) -> bool {
        self.dynamic.as_ref().is_some_and(|d| d.done)
    }

    fn render(&self) -> Array3<u8> {
        let d = self.dynamic();
        self.draw(d.agent, d.goal)
    }

    fn render_goal(&self) -> Array3<u8> {
        let d = self.dynamic();
        self.draw(d.goal, d.goal)
    }

    fn goal_distance(&self) -> f64 {
        let d = self.dynamic();
        self.layout.path_length(d.agent, d.goal)
    }

    fn boxed_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> TwoRoom {
        let mut e = TwoRoom::new(EnvConfig { image_size: 64 });
        let d = e.variation_space().defaults();
        e.reset(0, &d).unwrap();
        e
    }

    #[test]
    fn catalog_has_seventeen_leaves() {
        assert_eq!(variation_space().len(), 17);
    }

    #[test]
    fn zero_action_keeps_position_and_energy() {
        let mut e = env();
        let before = e.state();
        e.step(&[0.0, 0.0]).unwrap();
        assert_eq!(before, e.state());
    }

    #[test]
    fn pushing_into_wall_is_blocked() {
        let mut e = env();
        let l = e.layout().clone();
        // Agent touching the left face of the lower wall piece.
        let wall = l.walls[0];
        let x = wall.x0 - l.agent_radius;
        e.set_state(&[x as f32, 0.2, 1.0, 0.8, 0.7]).unwrap();
        let x = e.state()[0];
        e.step(&[1.0, 0.0]).unwrap();
        assert_eq!(e.state()[0], x);
        assert_eq!(e.state()[1], 0.2);
    }

    #[test]
    fn goal_on_start_is_immediate_success() {
        let mut e = TwoRoom::new(EnvConfig { image_size: 32 });
        let mut a = e.variation_space().defaults();
        a.insert("goal.position".into(), a["agent.position"].clone());
        e.reset(0, &a).unwrap();
        assert!(e.is_success());
        assert!(e.is_done());
        assert_eq!(e.step(&[0.0, 0.0]), Err(EnvError::EpisodeOver));
    }

    #[test]
    fn success_boundary_is_inclusive() {
        let mut e = env();
        // Distance 0.0625 is exact in binary floating point.
        let exact = Vec2::new(0.75, 0.5);
        let goal = Vec2::new(0.75, 0.5 + 0.0625);
        e.layout.goal_radius = 0.0625;
        assert!(e.success_at(exact, goal));
        e.layout.goal_radius = 0.0625 - 1e-12;
        assert!(!e.success_at(exact, goal));
    }

    #[test]
    fn energy_drains_by_distance_and_truncates() {
        let mut e = TwoRoom::new(EnvConfig { image_size: 32 });
        let mut a = e.variation_space().defaults();
        a.insert("agent.max_energy".into(), Value::real(1.0));
        e.reset(0, &a).unwrap();
        e.set_state(&[0.2, 0.3, 0.05, 0.8, 0.7]).unwrap();
        let out = e.step(&[1.0, 0.0]).unwrap();
        assert!(!out.done);
        assert!((e.state()[2] - 0.02).abs() < 1e-6);
        let out = e.step(&[1.0, 0.0]).unwrap();
        assert!(out.done && !out.success);
        assert_eq!(e.state()[2], 0.0);
        assert_eq!(e.step(&[1.0, 0.0]), Err(EnvError::EpisodeOver));
    }

    #[test]
    fn walls_leave_door_gap() {
        let l = Layout::from_assignment(&variation_space().defaults());
        assert_eq!(l.walls.len(), 2);
        assert_eq!(l.doors, vec![(0.4, 0.6)]);
        let p = l.sweep(Vec2::new(0.45, 0.5), Vec2::new(0.03, 0.0));
        assert!((p.x - 0.48).abs() < 1e-12, "door lets the agent through");
    }

    #[test]
    fn horizontal_axis_swaps_rooms() {
        let mut a = variation_space().defaults();
        a.insert("wall.axis".into(), Value::choice("horizontal"));
        let l = Layout::from_assignment(&a);
        assert_eq!(l.side(Vec2::new(0.9, 0.2)), -1);
        assert_eq!(l.side(Vec2::new(0.1, 0.8)), 1);
        assert!(l.walls.iter().all(|w| w.y0 < 0.5 && w.y1 > 0.5));
    }

    #[test]
    fn placement_moves_out_of_walls() {
        let l = Layout::from_assignment(&variation_space().defaults());
        let p = l.place(Vec2::new(0.5, 0.2));
        assert!(l.blocked().all(|e| !e.contains_open(p)));
    }

    #[test]
    fn path_length_routes_through_door() {
        let l = Layout::from_assignment(&variation_space().defaults());
        let a = Vec2::new(0.2, 0.5);
        let b = Vec2::new(0.8, 0.5);
        assert!((l.path_length(a, b) - 0.6).abs() < 1e-12);
        let c = Vec2::new(0.2, 0.9);
        let d = Vec2::new(0.8, 0.9);
        assert!(l.path_length(c, d) > 0.6 + 0.1);
    }
}
