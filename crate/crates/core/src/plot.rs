//! Top-down and side-view SVG renderings of a trajectory file.

use std::fmt::Write as _;

use crate::geometry::{corners, Cuboid, Pose};
use crate::pipeline::TrajectoryRecord;
use crate::scene::{ObjectModel, Scene};

/// Draw the object every this many states, plus the first and last state of
/// each segment.
pub const FOOTPRINT_STRIDE: usize = 20;
const SCALE: f64 = 500.0;
const MARGIN: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum View {
    /// World x to the right, world y up.
    Top,
    /// World x to the right, world z up.
    Side,
}

impl View {
    fn project(self, p: &crate::geometry::Vec3) -> (f64, f64) {
        match self {
            View::Top => (p.x, p.y),
            View::Side => (p.x, p.z),
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            View::Top => "top.svg",
            View::Side => "side.svg",
        }
    }
}

fn hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite points"));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

struct Canvas {
    view: View,
    min: (f64, f64),
    max: (f64, f64),
    body: String,
}

impl Canvas {
    fn px(&self, p: (f64, f64)) -> (f64, f64) {
        ((p.0 - self.min.0) * SCALE, (self.max.1 - p.1) * SCALE)
    }

    fn polygon(&mut self, pts: &[(f64, f64)], class: &str, style: &str) {
        let pts: Vec<String> = pts
            .iter()
            .map(|&p| {
                let (x, y) = self.px(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(self.body, r#"<polygon class="{class}" points="{}" {style}/>"#, pts.join(" "));
    }

    fn cuboid(&mut self, c: &Cuboid, pose: &Pose, class: &str, style: &str) {
        let pts = corners(c, pose).iter().map(|p| self.view.project(p)).collect();
        self.polygon(&hull(pts), class, style);
    }

    fn circle(&mut self, center: (f64, f64), r: f64, class: &str, style: &str) {
        let (x, y) = self.px(center);
        let _ = writeln!(self.body, r#"<circle class="{class}" cx="{x:.2}" cy="{y:.2}" r="{:.2}" {style}/>"#, r * SCALE);
    }

    fn finish(self) -> String {
        let w = (self.max.0 - self.min.0) * SCALE;
        let h = (self.max.1 - self.min.1) * SCALE;
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.2} {h:.2}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body
        )
    }
}

fn scene_bounds(view: View, scene: &Scene, poses: &[Pose], obj: &ObjectModel) -> ((f64, f64), (f64, f64)) {
    let mut pts: Vec<(f64, f64)> = Vec::new();
    if let Some(w) = &scene.wall {
        let (c, p) = w.slab();
        pts.extend(corners(&c, &p).iter().map(|q| view.project(q)));
    }
    for o in &scene.obstacles {
        pts.extend(corners(&o.half_extents, &o.pose()).iter().map(|q| view.project(q)));
    }
    for x in poses {
        pts.extend(corners(obj.cuboid(), x).iter().map(|q| view.project(q)));
    }
    if pts.is_empty() {
        pts.push((0.0, 0.0));
    }
    let mut min = (f64::INFINITY, f64::INFINITY);
    let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in pts {
        min = (min.0.min(p.0), min.1.min(p.1));
        max = (max.0.max(p.0), max.1.max(p.1));
    }
    if view == View::Side {
        min.1 = min.1.min(0.0);
    }
    ((min.0 - MARGIN, min.1 - MARGIN), (max.0 + MARGIN, max.1 + MARGIN))
}

/// Object poses drawn as footprints, in record order.
pub fn keyframe_poses(records: &[TrajectoryRecord]) -> Vec<Pose> {
    let states: Vec<(usize, usize, Pose)> = records
        .iter()
        .filter_map(|r| match r {
            TrajectoryRecord::State { segment, step, state } => Some((*segment, *step, state.object_pose)),
            _ => None,
        })
        .collect();
    let mut out = Vec::new();
    for (i, (seg, step, x)) in states.iter().enumerate() {
        let last_of_segment = states.get(i + 1).is_none_or(|n| n.0 != *seg);
        if step % FOOTPRINT_STRIDE == 0 || last_of_segment {
            out.push(*x);
        }
    }
    out
}

/// Render one view. Records without a header fall back to an empty scene.
pub fn render(records: &[TrajectoryRecord], view: View) -> String {
    let (scene, obj, goals) = match records.first() {
        Some(TrajectoryRecord::Header { scene, object, goals, .. }) => (scene.clone(), object.clone(), goals.clone()),
        _ => (Scene::new(None, vec![]), ObjectModel::new("none", 0.01, 0.01, 0.01), vec![]),
    };
    let poses = keyframe_poses(records);
    let mut goal_poses: Vec<Pose> = goals.iter().map(|g| g.center).collect();
    goal_poses.extend(poses.iter().copied());
    let (min, max) = scene_bounds(view, &scene, &goal_poses, &obj);
    let mut c = Canvas {
        view,
        min,
        max,
        body: String::new(),
    };
    if view == View::Side {
        let _ = writeln!(
            c.body,
            r#"<line class="ground" x1="0" y1="{y:.2}" x2="{w:.2}" y2="{y:.2}" stroke="black"/>"#,
            y = max.1 * SCALE,
            w = (max.0 - min.0) * SCALE
        );
    }
    if let Some(w) = &scene.wall {
        let (cub, pose) = w.slab();
        c.cuboid(&cub, &pose, "wall", r##"fill="#888" stroke="black""##);
    }
    for o in &scene.obstacles {
        c.cuboid(&o.half_extents, &o.pose(), "obstacle", r##"fill="#c96" stroke="black""##);
    }
    for g in &goals {
        let p = view.project(&g.center.position);
        c.circle(p, g.pos_radius.max(0.004), "goal", r##"fill="none" stroke="#2a2" stroke-width="2""##);
        c.cuboid(obj.cuboid(), &g.center, "goal-pose", r##"fill="none" stroke="#2a2" stroke-dasharray="4 3""##);
    }
    for x in &poses {
        c.cuboid(obj.cuboid(), x, "footprint", r##"fill="#36c" fill-opacity="0.15" stroke="#36c""##);
    }
    c.finish()
}
