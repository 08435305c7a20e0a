//! Small penalty least-squares optimizer over pose and gripper charts.
//!
//! The objective and all constraints are expressed as residual vectors. Each
//! start runs damped Gauss-Newton (Levenberg-Marquardt) on the penalized
//! residual stack with forward-differenced Jacobians, escalating the penalty
//! weight between rounds, then a minimum-norm projection polishes the active
//! constraints.

use nalgebra::{DMatrix, DVector, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::contact::GripperConfig;
use crate::geometry::{rot_z, Pose, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("infeasible: best max residual {best_residual:.3e}")]
    Infeasible { best_residual: f64 },
}

pub type Residual<'a, V> = Box<dyn Fn(&V) -> Vec<f64> + Send + Sync + 'a>;

/// Equalities must vanish, inequalities must be non-negative.
pub struct ConstraintSystem<'a, V> {
    pub equalities: Vec<Residual<'a, V>>,
    pub inequalities: Vec<Residual<'a, V>>,
}

impl<V> Default for ConstraintSystem<'_, V> {
    fn default() -> Self {
        Self {
            equalities: Vec::new(),
            inequalities: Vec::new(),
        }
    }
}

impl<'a, V> ConstraintSystem<'a, V> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn eq(mut self, f: impl Fn(&V) -> Vec<f64> + Send + Sync + 'a) -> Self {
        self.equalities.push(Box::new(f));
        self
    }

    pub fn ineq(mut self, f: impl Fn(&V) -> Vec<f64> + Send + Sync + 'a) -> Self {
        self.inequalities.push(Box::new(f));
        self
    }

    pub fn is_empty(&self) -> bool {
        self.equalities.is_empty() && self.inequalities.is_empty()
    }

    /// Largest equality magnitude or inequality shortfall.
    pub fn max_violation(&self, v: &V) -> f64 {
        let mut worst: f64 = 0.0;
        for f in &self.equalities {
            for r in f(v) {
                worst = worst.max(if r.is_finite() { r.abs() } else { f64::INFINITY });
            }
        }
        for f in &self.inequalities {
            for r in f(v) {
                worst = worst.max(if r.is_finite() { (-r).max(0.0) } else { f64::INFINITY });
            }
        }
        worst
    }

    fn penalized(&self, v: &V, weight: f64, out: &mut Vec<f64>) {
        for f in &self.equalities {
            out.extend(f(v).into_iter().map(|r| weight * r));
        }
        for f in &self.inequalities {
            out.extend(f(v).into_iter().map(|r| weight * r.min(0.0)));
        }
    }

    /// Residuals of constraints that are violated or binding, as equalities.
    fn active(&self, v: &V, band: f64) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (i, f) in self.equalities.iter().enumerate() {
            for (j, r) in f(v).into_iter().enumerate() {
                out.push((i, j, r));
            }
        }
        let n = self.equalities.len();
        for (i, f) in self.inequalities.iter().enumerate() {
            for (j, r) in f(v).into_iter().enumerate() {
                if r < band {
                    out.push((n + i, j, r.min(0.0)));
                }
            }
        }
        out
    }

    fn raw_at(&self, v: &V, idx: (usize, usize)) -> f64 {
        let n = self.equalities.len();
        if idx.0 < n {
            (self.equalities[idx.0])(v)[idx.1]
        } else {
            (self.inequalities[idx.0 - n])(v)[idx.1]
        }
    }

    fn residual_at(&self, v: &V, idx: (usize, usize)) -> f64 {
        let n = self.equalities.len();
        if idx.0 < n {
            (self.equalities[idx.0])(v)[idx.1]
        } else {
            (self.inequalities[idx.0 - n])(v)[idx.1].min(0.0)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub multistart: usize,
    pub penalty_growth: f64,
    pub initial_penalty: f64,
    /// Starts whose penalized optimum still violates constraints by more than
    /// this are dropped before polishing.
    pub discard_residual: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_outer: 8,
            max_inner: 400,
            multistart: 8,
            penalty_growth: 10.0,
            initial_penalty: 1e3,
            discard_residual: 1e-4,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn is_valid(&self) -> bool {
        self.tol > 0.0
            && self.max_outer > 0
            && self.max_inner > 0
            && self.multistart > 0
            && self.penalty_growth > 1.0
            && self.initial_penalty > 0.0
    }
}

/// A manifold variable with a local additive chart.
pub trait Chart: Clone + Send + Sync {
    const DIM: usize;
    fn retract(&self, delta: &[f64]) -> Self;
    /// Position used for deterministic tie-breaking.
    fn anchor(&self) -> Vec3;
    fn perturb(&self, dp: Vec3, dyaw: f64) -> Self;
}

fn exp_rotation(w: &[f64]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(Vec3::new(w[0], w[1], w[2]))
}

impl Chart for Pose {
    const DIM: usize = 6;

    fn retract(&self, d: &[f64]) -> Self {
        Pose::new(
            self.position + Vec3::new(d[0], d[1], d[2]),
            exp_rotation(&d[3..6]) * self.orientation,
        )
    }

    fn anchor(&self) -> Vec3 {
        self.position
    }

    fn perturb(&self, dp: Vec3, dyaw: f64) -> Self {
        Pose::new(self.position + dp, rot_z(dyaw) * self.orientation)
    }
}

impl Chart for GripperConfig {
    const DIM: usize = 7;

    fn retract(&self, d: &[f64]) -> Self {
        GripperConfig {
            pose: self.pose.retract(&d[..6]),
            opening: self.opening + d[6],
        }
    }

    fn anchor(&self) -> Vec3 {
        self.pose.position
    }

    fn perturb(&self, dp: Vec3, dyaw: f64) -> Self {
        GripperConfig {
            pose: self.pose.perturb(dp, dyaw),
            opening: self.opening,
        }
    }
}

pub type Objective<'a, V> = dyn Fn(&V) -> Vec<f64> + Send + Sync + 'a;

/// Residual vector of the translation from `target`, for use as a
/// least-squares objective, plus a small orientation regularizer.
pub fn pose_distance_residual(target: Pose, rotation_weight: f64) -> impl Fn(&Pose) -> Vec<f64> + Send + Sync {
    move |x: &Pose| {
        let d = x.position - target.position;
        let w = (x.orientation * target.orientation.inverse()).scaled_axis() * rotation_weight.sqrt();
        vec![d.x, d.y, d.z, w.x, w.y, w.z]
    }
}

fn cost(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn stack<V: Chart>(objective: &Objective<'_, V>, cs: &ConstraintSystem<'_, V>, v: &V, weight: f64) -> Vec<f64> {
    let mut r = objective(v);
    cs.penalized(v, weight, &mut r);
    r
}

fn jacobian<V: Chart>(f: impl Fn(&V) -> Vec<f64>, v: &V, r0: &[f64]) -> DMatrix<f64> {
    let h = 1e-7;
    let mut j = DMatrix::zeros(r0.len(), V::DIM);
    let mut d = vec![0.0; V::DIM];
    for k in 0..V::DIM {
        d[k] = h;
        let r = f(&v.retract(&d));
        d[k] = 0.0;
        for (i, ri) in r.iter().enumerate().take(r0.len()) {
            j[(i, k)] = (ri - r0[i]) / h;
        }
    }
    j
}

/// Levenberg-Marquardt on the penalized stack at a fixed penalty weight.
fn minimize<V: Chart>(
    objective: &Objective<'_, V>,
    cs: &ConstraintSystem<'_, V>,
    start: V,
    weight: f64,
    max_iter: usize,
) -> V {
    let f = |v: &V| stack(objective, cs, v, weight);
    let mut v = start;
    let mut r = f(&v);
    let mut c = cost(&r);
    let mut lambda = 1e-3;
    for _ in 0..max_iter {
        if c < 1e-30 {
            break;
        }
        let j = jacobian(f, &v, &r);
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = &jt * DVector::from_column_slice(&r);
        if g.amax() < 1e-14 {
            break;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj.clone();
            for k in 0..V::DIM {
                a[(k, k)] += lambda * (1.0 + jtj[(k, k)]);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let cand = v.retract(step.as_slice());
            let rc = f(&cand);
            let cc = cost(&rc);
            if cc.is_finite() && cc < c {
                let small = step.amax() < 1e-13 || (c - cc) <= 1e-15 * c;
                v = cand;
                r = rc;
                c = cc;
                lambda = (lambda * 0.3).max(1e-12);
                improved = !small;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    v
}

/// Minimum-norm Gauss-Newton projection onto the active constraint set.
fn polish<V: Chart>(cs: &ConstraintSystem<'_, V>, start: V, tol: f64) -> V {
    let mut v = start;
    for _ in 0..50 {
        if cs.max_violation(&v) <= tol * 0.01 {
            break;
        }
        let active = cs.active(&v, tol * 0.01);
        if active.is_empty() {
            break;
        }
        let idx: Vec<(usize, usize)> = active.iter().map(|a| (a.0, a.1)).collect();
        let r0: Vec<f64> = active.iter().map(|a| a.2).collect();
        let f = |x: &V| idx.iter().map(|&i| cs.residual_at(x, i)).collect::<Vec<_>>();
        let j = jacobian(f, &v, &r0);
        let mut jjt = &j * j.transpose();
        for k in 0..jjt.nrows() {
            jjt[(k, k)] += 1e-12;
        }
        let Some(y) = jjt.lu().solve(&DVector::from_column_slice(&r0)) else {
            break;
        };
        let step = -(j.transpose() * y);
        let cand = v.retract(step.as_slice());
        if cs.max_violation(&cand) >= cs.max_violation(&v) {
            break;
        }
        v = cand;
    }
    v
}

/// Gauss-Newton on the objective restricted to the null space of the active
/// constraints. The penalty stage stalls along stiff constraint directions and
/// can leave the optimum slightly off; this closes the gap while holding
/// feasibility.
fn refine<V: Chart>(objective: &Objective<'_, V>, cs: &ConstraintSystem<'_, V>, start: V, tol: f64) -> V {
    let mut v = start;
    let mut r = objective(&v);
    for _ in 0..20 {
        let idx: Vec<(usize, usize)> = cs.active(&v, tol).iter().map(|a| (a.0, a.1)).collect();
        let c: Vec<f64> = idx.iter().map(|&i| cs.residual_at(&v, i)).collect();
        let raw: Vec<f64> = idx.iter().map(|&i| cs.raw_at(&v, i)).collect();
        let a = jacobian(|x: &V| idx.iter().map(|&i| cs.raw_at(x, i)).collect(), &v, &raw);
        let jo = jacobian(objective, &v, &r);
        let eig = (a.transpose() * &a).symmetric_eigen();
        let scale = eig.eigenvalues.amax().max(1e-300);
        let free: Vec<usize> = (0..V::DIM).filter(|&k| eig.eigenvalues[k] <= 1e-10 * scale).collect();
        let mut dx = DVector::zeros(V::DIM);
        if !idx.is_empty() {
            let mut aat = &a * a.transpose();
            for k in 0..aat.nrows() {
                aat[(k, k)] += 1e-14;
            }
            let Some(y) = aat.lu().solve(&DVector::from_column_slice(&c)) else {
                break;
            };
            dx -= a.transpose() * y;
        }
        if !free.is_empty() {
            let n = DMatrix::from_fn(V::DIM, free.len(), |i, j| eig.eigenvectors[(i, free[j])]);
            let jn = &jo * &n;
            let rhs = jn.transpose() * (DVector::from_column_slice(&r) + &jo * &dx);
            let mut h = jn.transpose() * &jn;
            for k in 0..h.nrows() {
                h[(k, k)] += 1e-14;
            }
            let Some(z) = h.lu().solve(&rhs) else {
                break;
            };
            dx -= n * z;
        }
        let cand = v.retract(dx.as_slice());
        let rc = objective(&cand);
        let bound = (tol * 0.01).max(cs.max_violation(&v));
        if cs.max_violation(&cand) > bound || cost(&rc) >= cost(&r) {
            break;
        }
        v = cand;
        r = rc;
        if dx.amax() < 1e-12 {
            break;
        }
    }
    v
}

fn starts<V: Chart>(guess: &V, cfg: &SolverConfig) -> Vec<V> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = vec![guess.clone()];
    for _ in 1..cfg.multistart {
        let dp = Vec3::new(
            rng.gen_range(-0.02..=0.02),
            rng.gen_range(-0.02..=0.02),
            rng.gen_range(-0.02..=0.02),
        );
        let dyaw = rng.gen_range(-10f64..=10.0).to_radians();
        out.push(guess.perturb(dp, dyaw));
    }
    out
}

fn solve<V: Chart>(
    objective: &Objective<'_, V>,
    cs: &ConstraintSystem<'_, V>,
    guess: &V,
    cfg: &SolverConfig,
) -> Result<V, SolverError> {
    if cs.max_violation(guess) <= cfg.tol && cost(&objective(guess)) == 0.0 {
        return Ok(guess.clone());
    }
    let results: Vec<(V, f64, f64)> = starts(guess, cfg)
        .into_par_iter()
        .map(|s| {
            let mut v = s;
            let mut weight = cfg.initial_penalty.sqrt();
            for _ in 0..cfg.max_outer {
                v = minimize(objective, cs, v, weight, cfg.max_inner);
                if cs.max_violation(&v) <= cfg.tol * 1e-3 {
                    break;
                }
                weight *= cfg.penalty_growth.sqrt();
            }
            let pre = cs.max_violation(&v);
            if pre > cfg.discard_residual {
                return (v, f64::INFINITY, pre);
            }
            let v = refine(objective, cs, polish(cs, v, cfg.tol), cfg.tol);
            let viol = cs.max_violation(&v);
            (v.clone(), cost(&objective(&v)), viol)
        })
        .collect();
    let best_residual = results.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    results
        .into_iter()
        .filter(|r| r.1.is_finite() && r.2 <= cfg.tol)
        .min_by(|a, b| {
            a.1.total_cmp(&b.1).then_with(|| {
                let (pa, pb) = (a.0.anchor(), b.0.anchor());
                pa.x.total_cmp(&pb.x)
                    .then(pa.y.total_cmp(&pb.y))
                    .then(pa.z.total_cmp(&pb.z))
            })
        })
        .map(|r| r.0)
        .ok_or(SolverError::Infeasible { best_residual })
}

/// Pose minimizing the squared `objective` residual subject to `cs`.
pub fn solve_pose(
    objective: &Objective<'_, Pose>,
    cs: &ConstraintSystem<'_, Pose>,
    guess: Pose,
    cfg: &SolverConfig,
) -> Result<Pose, SolverError> {
    solve(objective, cs, &guess, cfg)
}

/// Any gripper configuration satisfying `cs`, searched from `seed`.
pub fn solve_feasible(
    cs: &ConstraintSystem<'_, GripperConfig>,
    seed: GripperConfig,
    cfg: &SolverConfig,
) -> Result<GripperConfig, SolverError> {
    let zero = |_: &GripperConfig| Vec::new();
    solve(&zero, cs, &seed, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::{freestanding_residual, ground_residual, wall_residual, GripperConfig};
    use crate::scene::{GripperModel, ObjectModel, Scene, Wall};

    fn ground_wall<'a>(obj: &'a ObjectModel, scene: &'a Scene) -> ConstraintSystem<'a, Pose> {
        ConstraintSystem::new()
            .eq(move |x: &Pose| vec![ground_residual(x, obj)])
            .eq(move |x: &Pose| wall_residual(x, obj, scene).map(|r| r.to_vec()).unwrap_or(vec![f64::NAN; 2]))
            .eq(|x: &Pose| freestanding_residual(x, 2).to_vec())
    }

    #[test]
    fn feasible_guess_is_fixed_point() {
        let obj = ObjectModel::new("b", 0.1, 0.075, 0.03);
        let scene = Scene::new(Some(Wall::new(0.75, 0.0)), vec![]);
        let cs = ground_wall(&obj, &scene);
        let guess = Pose::translation(0.65, 0.0, 0.03);
        let obj_fn = pose_distance_residual(guess, 1e-3);
        let x = solve_pose(&obj_fn, &cs, guess, &SolverConfig::default()).unwrap();
        assert_eq!(x, guess);
    }

    #[test]
    fn projects_onto_wall() {
        let obj = ObjectModel::new("b", 0.1, 0.075, 0.03);
        let scene = Scene::new(Some(Wall::new(0.75, 0.0)), vec![]);
        let cs = ground_wall(&obj, &scene);
        let guess = Pose::translation(0.60, 0.0, 0.03);
        let obj_fn = pose_distance_residual(guess, 1e-3);
        let x = solve_pose(&obj_fn, &cs, guess, &SolverConfig::default()).unwrap();
        assert!((x.position - Vec3::new(0.65, 0.0, 0.03)).norm() < 1e-6, "{:?}", x.position);
        assert!(cs.max_violation(&x) <= 1e-6);
    }

    #[test]
    fn contradiction_is_infeasible() {
        let obj = ObjectModel::new("b", 0.1, 0.075, 0.03);
        let scene = Scene::new(Some(Wall::new(2.0, 0.0)), vec![]);
        let cs = ground_wall(&obj, &scene).ineq(|x: &Pose| vec![1.0 - x.position.x]);
        let guess = Pose::translation(0.60, 0.0, 0.03);
        let obj_fn = pose_distance_residual(guess, 1e-3);
        assert!(matches!(
            solve_pose(&obj_fn, &cs, guess, &SolverConfig::default()),
            Err(SolverError::Infeasible { .. })
        ));
    }

    #[test]
    fn empty_system_returns_seed() {
        let m = GripperModel::default();
        let seed = GripperConfig::top_down(Vec3::new(0.5, 0.1, 0.2), 0.3, 0.01, &m);
        let cs = ConstraintSystem::new();
        assert_eq!(solve_feasible(&cs, seed, &SolverConfig::default()).unwrap(), seed);
    }

    #[test]
    fn feasibility_reaches_target_point() {
        let m = GripperModel::default();
        let seed = GripperConfig::top_down(Vec3::new(0.5, 0.1, 0.2), 0.0, 0.0, &m);
        let target = Vec3::new(0.55, 0.0, 0.03);
        let mm = m.clone();
        let cs = ConstraintSystem::new().eq(move |g: &GripperConfig| {
            let d = g.tip_center(&mm) - target;
            vec![d.x, d.y, d.z]
        });
        let g = solve_feasible(&cs, seed, &SolverConfig::default()).unwrap();
        assert!((g.tip_center(&m) - target).norm() < 1e-6);
    }

    #[test]
    fn deterministic() {
        let obj = ObjectModel::new("b", 0.1, 0.075, 0.03);
        let scene = Scene::new(Some(Wall::new(0.775, -8.5)), vec![]);
        let cs = ground_wall(&obj, &scene);
        let guess = Pose::from_xyz_yaw(0.58, 0.05, 0.03, 0.2);
        let obj_fn = pose_distance_residual(guess, 1e-3);
        let cfg = SolverConfig::default();
        let a = solve_pose(&obj_fn, &cs, guess, &cfg).unwrap();
        let b = solve_pose(&obj_fn, &cs, guess, &cfg).unwrap();
        assert_eq!(a, b);
        let r = wall_residual(&a, &obj, &scene).unwrap();
        assert!(r[0].abs() < 1e-6 && r[1].abs() < 1e-6);
    }
}
