//! Local refinement: colored ICP (joint geometric and photometric
//! objective) and the classic point-to-point variant.

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};

use super::{
    evaluate_alignment, RegistrationError, RegistrationFailure, RegistrationParams, RegistrationResult, Stage,
};
use crate::geometry::{RigidTransform, RotationMatrix};
use crate::pointcloud::{ColoredPointCloud, SpatialIndex};

/// Settings for one pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelOptions {
    pub max_correspondence_distance: f64,
    pub max_iterations: usize,
    /// Weight of the geometric residual; the photometric one gets `1 - w`.
    pub geometric_weight: f64,
    pub gradient_radius: f64,
    pub max_nn: usize,
    pub relative_tolerance: f64,
    pub fitness_threshold: f64,
    pub degeneracy_threshold: f64,
}

impl LevelOptions {
    pub fn for_voxel(params: &RegistrationParams, voxel: f64) -> Self {
        Self {
            max_correspondence_distance: params.correspondence_distance_factor * voxel,
            max_iterations: params.max_iterations_per_level,
            geometric_weight: params.color_weight,
            gradient_radius: params.normal_radius_factor * voxel,
            max_nn: params.max_nn,
            relative_tolerance: params.relative_tolerance,
            fitness_threshold: params.fitness_threshold,
            degeneracy_threshold: params.degeneracy_threshold,
        }
    }
}

const MAX_HALVINGS: usize = 6;

/// Gauss-Newton step `-H^-1 b` with a tiny relative damping so that
/// directions the data leaves unconstrained get a zero step instead of a
/// failed solve.
pub(crate) fn damped_step(h: &Matrix6<f64>, b: &Vector6<f64>) -> Option<Vector6<f64>> {
    let scale = h.trace() / 6.0;
    if !(scale > 0.0 && scale.is_finite()) {
        return None;
    }
    let damped = h + Matrix6::identity() * (scale * 1e-10);
    let xi = -damped.cholesky()?.solve(b);
    xi.iter().all(|v| v.is_finite()).then_some(xi)
}

fn valid_normal(n: &Vector3<f64>) -> bool {
    n.norm_squared() > 0.25
}

/// Tangent-plane intensity gradient at each target point, fitted by least
/// squares to the neighbors' intensities with a constraint keeping it
/// orthogonal to the normal. Points without enough support get zero.
pub fn intensity_gradients(
    cloud: &ColoredPointCloud,
    index: &SpatialIndex,
    radius: f64,
    max_nn: usize,
) -> Result<Vec<Vector3<f64>>, RegistrationError> {
    let normals = cloud.normals().ok_or(RegistrationError::MissingNormals("intensity gradients"))?;
    let points = cloud.points();
    let mut hits = Vec::new();
    let mut out = vec![Vector3::zeros(); points.len()];
    for i in 0..points.len() {
        let n = normals[i];
        if !valid_normal(&n) {
            continue;
        }
        index.hybrid(&points[i], radius, max_nn, &mut hits);
        if hits.len() < 4 {
            continue;
        }
        let p = points[i];
        let ip = cloud.intensity(i);
        let mut ata = Matrix3::<f64>::zeros();
        let mut atb = Vector3::<f64>::zeros();
        for &(j, _) in &hits {
            if j == i {
                continue;
            }
            let q = points[j];
            let proj = q - n * (q - p).dot(&n);
            let a = proj - p;
            ata += a * a.transpose();
            atb += a * (cloud.intensity(j) - ip);
        }
        let w = (hits.len() - 1) as f64;
        let nw = n * w;
        ata += nw * nw.transpose();
        if let Some(chol) = ata.cholesky() {
            out[i] = chol.solve(&atb);
        }
    }
    Ok(out)
}

/// Target data reused across iterations.
pub(crate) struct PreparedTarget<'a> {
    pub cloud: &'a ColoredPointCloud,
    pub index: SpatialIndex,
    pub gradients: Option<Vec<Vector3<f64>>>,
}

impl<'a> PreparedTarget<'a> {
    pub fn new(cloud: &'a ColoredPointCloud, with_color: bool, opts: &LevelOptions) -> Result<Self, RegistrationError> {
        let index = cloud.index();
        let gradients = if with_color {
            Some(intensity_gradients(cloud, &index, opts.gradient_radius, opts.max_nn)?)
        } else {
            None
        };
        Ok(Self { cloud, index, gradients })
    }
}

struct Linearization {
    objective: f64,
    h: Matrix6<f64>,
    b: Vector6<f64>,
    used: usize,
}

fn photometric(
    tgt: &PreparedTarget,
    j: usize,
    s: &Vector3<f64>,
    n: &Vector3<f64>,
    source_intensity: f64,
) -> Option<(f64, Vector3<f64>)> {
    let grads = tgt.gradients.as_ref()?;
    let g = grads[j];
    let p = tgt.cloud.points()[j];
    let proj = s - n * (s - p).dot(n);
    let predicted = tgt.cloud.intensity(j) + g.dot(&(proj - p));
    let dg = g - n * g.dot(n);
    Some((predicted - source_intensity, dg))
}

/// Truncated objective and its Gauss-Newton system at `t`. Every source
/// point contributes `min(e, cap)`, and points without a correspondence
/// contribute `cap`, so the objective varies continuously as points enter
/// or leave the correspondence radius.
fn linearize(src: &ColoredPointCloud, tgt: &PreparedTarget, t: &RigidTransform, opts: &LevelOptions) -> Linearization {
    let normals = tgt.cloud.normals().expect("prepared target has normals");
    let dmax2 = opts.max_correspondence_distance.powi(2);
    let wg = opts.geometric_weight;
    let wc = if tgt.gradients.is_some() { 1.0 - wg } else { 0.0 };
    let cap = wg * dmax2 + wc * 0.25;
    let mut objective = 0.0;
    let mut h = Matrix6::zeros();
    let mut b = Vector6::zeros();
    let mut used = 0;
    for (i, sp) in src.points().iter().enumerate() {
        let s = t.apply(sp);
        let Some((j, d2)) = tgt.index.nearest(&s) else { break };
        let n = normals[j];
        if d2 > dmax2 || !valid_normal(&n) {
            objective += cap;
            continue;
        }
        let p = tgt.cloud.points()[j];
        let rg = (s - p).dot(&n);
        let mut e = wg * rg * rg;
        let color = if wc > 0.0 { photometric(tgt, j, &s, &n, src.intensity(i)) } else { None };
        if let Some((rc, _)) = color {
            e += wc * rc * rc;
        }
        if e >= cap {
            objective += cap;
            continue;
        }
        objective += e;
        used += 1;
        let mut jg = Vector6::zeros();
        jg.fixed_rows_mut::<3>(0).copy_from(&s.cross(&n));
        jg.fixed_rows_mut::<3>(3).copy_from(&n);
        h += wg * jg * jg.transpose();
        b += wg * jg * rg;
        if let Some((rc, dg)) = color {
            let mut jc = Vector6::zeros();
            jc.fixed_rows_mut::<3>(0).copy_from(&s.cross(&dg));
            jc.fixed_rows_mut::<3>(3).copy_from(&dg);
            h += wc * jc * jc.transpose();
            b += wc * jc * rc;
        }
    }
    let count = src.len().max(1) as f64;
    Linearization { objective: objective / count, h, b, used }
}

/// Smallest eigenvalue (per correspondence) of the information matrix of
/// the alignment, with rotations taken about the correspondence centroid
/// and scaled by the RMS lever arm so that both blocks share units. Small
/// values mean some direction of motion is unconstrained by the data.
pub(crate) fn constraint_strength(
    src: &ColoredPointCloud,
    tgt: &PreparedTarget,
    t: &RigidTransform,
    max_distance: f64,
    geometric_weight: f64,
) -> f64 {
    let Some(normals) = tgt.cloud.normals() else { return f64::INFINITY };
    let dmax2 = max_distance * max_distance;
    let mut pairs = Vec::new();
    for sp in src.points() {
        let s = t.apply(sp);
        if let Some((j, d2)) = tgt.index.nearest(&s) {
            if d2 <= dmax2 && valid_normal(&normals[j]) {
                pairs.push((s, j));
            }
        }
    }
    if pairs.len() < 6 {
        return 0.0;
    }
    let c = pairs.iter().map(|(s, _)| s).sum::<Vector3<f64>>() / pairs.len() as f64;
    let lever = (pairs.iter().map(|(s, _)| (s - c).norm_squared()).sum::<f64>() / pairs.len() as f64).sqrt();
    if lever == 0.0 {
        return 0.0;
    }
    let wg = geometric_weight;
    let wc = if tgt.gradients.is_some() { 1.0 - wg } else { 0.0 };
    let mut h = Matrix6::<f64>::zeros();
    for (s, j) in &pairs {
        let arm = (s - c) / lever;
        let n = normals[*j];
        let mut jg = Vector6::zeros();
        jg.fixed_rows_mut::<3>(0).copy_from(&arm.cross(&n));
        jg.fixed_rows_mut::<3>(3).copy_from(&n);
        h += wg * jg * jg.transpose();
        if wc > 0.0 {
            let g = tgt.gradients.as_ref().unwrap()[*j];
            let dg = g - n * g.dot(&n);
            let mut jc = Vector6::zeros();
            jc.fixed_rows_mut::<3>(0).copy_from(&arm.cross(&dg));
            jc.fixed_rows_mut::<3>(3).copy_from(&dg);
            h += wc * jc * jc.transpose();
        }
    }
    let eig = SymmetricEigen::new(h / pairs.len() as f64);
    eig.eigenvalues.min()
}

/// Applies the final acceptance checks (fitness, then conditioning).
fn finish(
    src: &ColoredPointCloud,
    tgt: &PreparedTarget,
    transform: RigidTransform,
    history: Vec<f64>,
    opts: &LevelOptions,
    geometric_weight: f64,
) -> RegistrationResult {
    let eval = evaluate_alignment(src, &tgt.index, &transform, opts.max_correspondence_distance);
    let mut failure = None;
    if eval.correspondences == 0 {
        failure = Some(RegistrationFailure::NoCorrespondences { stage: Stage::Local });
    } else if eval.fitness < opts.fitness_threshold {
        failure = Some(RegistrationFailure::LowFitness {
            stage: Stage::Local,
            fitness: eval.fitness,
            threshold: opts.fitness_threshold,
        });
    } else {
        let strength = constraint_strength(src, tgt, &transform, opts.max_correspondence_distance, geometric_weight);
        if strength < opts.degeneracy_threshold {
            failure = Some(RegistrationFailure::Degenerate {
                stage: Stage::Local,
                min_eigenvalue: strength,
                threshold: opts.degeneracy_threshold,
            });
        }
    }
    RegistrationResult {
        transform,
        fitness: eval.fitness,
        inlier_rmse: eval.inlier_rmse,
        converged: failure.is_none(),
        failure,
        objective_history: history,
        correspondences: eval.correspondences,
    }
}

fn check_inputs(src: &ColoredPointCloud, tgt: &ColoredPointCloud) -> Result<(), RegistrationError> {
    if src.is_empty() || tgt.is_empty() {
        return Err(RegistrationError::TooFewPoints { stage: "local", got: src.len().min(tgt.len()) });
    }
    Ok(())
}

pub(crate) fn colored_icp_prepared(
    src: &ColoredPointCloud,
    tgt: &PreparedTarget,
    init: &RigidTransform,
    opts: &LevelOptions,
) -> RegistrationResult {
    let mut t = *init;
    let mut lin = linearize(src, tgt, &t, opts);
    let mut history = vec![lin.objective];
    for _ in 0..opts.max_iterations {
        if lin.used < 6 {
            break;
        }
        let Some(xi) = damped_step(&lin.h, &lin.b) else { break };
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let omega = Vector3::new(xi[0], xi[1], xi[2]) * step;
            let trans = Vector3::new(xi[3], xi[4], xi[5]) * step;
            let candidate = RigidTransform::from_increment(&omega, &trans).compose(&t);
            let next = linearize(src, tgt, &candidate, opts);
            if next.objective <= lin.objective {
                accepted = Some((candidate, next));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, next)) = accepted else { break };
        let decrease = lin.objective - next.objective;
        t = candidate;
        history.push(next.objective);
        let done = decrease <= opts.relative_tolerance * lin.objective.max(f64::MIN_POSITIVE);
        lin = next;
        if done {
            break;
        }
    }
    let wg = if tgt.gradients.is_some() { opts.geometric_weight } else { 1.0 };
    finish(src, tgt, t, history, opts, wg)
}

/// Colored ICP at a single scale. `target` must carry normals. The
/// objective history is non-increasing: steps that would raise the
/// objective are shortened, and iteration stops if none helps.
pub fn colored_icp(
    source: &ColoredPointCloud,
    target: &ColoredPointCloud,
    init: &RigidTransform,
    opts: &LevelOptions,
) -> Result<RegistrationResult, RegistrationError> {
    check_inputs(source, target)?;
    if !target.has_normals() {
        return Err(RegistrationError::MissingNormals("colored ICP target"));
    }
    let prepared = PreparedTarget::new(target, true, opts)?;
    Ok(colored_icp_prepared(source, &prepared, init, opts))
}

/// Least-squares rigid transform mapping `a[i]` onto `b[i]`.
pub fn kabsch(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Option<RigidTransform> {
    if a.len() < 3 || a.len() != b.len() {
        return None;
    }
    let ca = a.iter().sum::<Vector3<f64>>() / a.len() as f64;
    let cb = b.iter().sum::<Vector3<f64>>() / b.len() as f64;
    let mut cov = Matrix3::<f64>::zeros();
    for (p, q) in a.iter().zip(b) {
        cov += (q - cb) * (p - ca).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * vt;
    Some(RigidTransform::new(RotationMatrix::from_matrix_unchecked(r), cb - r * ca))
}

pub(crate) fn point_to_point_prepared(
    src: &ColoredPointCloud,
    tgt: &PreparedTarget,
    init: &RigidTransform,
    opts: &LevelOptions,
) -> RegistrationResult {
    let dmax2 = opts.max_correspondence_distance.powi(2);
    let count = src.len().max(1) as f64;
    let mut t = *init;
    let assign = |t: &RigidTransform| {
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut objective = 0.0;
        for sp in src.points() {
            let s = t.apply(sp);
            match tgt.index.nearest(&s) {
                Some((j, d2)) if d2 <= dmax2 => {
                    objective += d2;
                    a.push(s);
                    b.push(tgt.cloud.points()[j]);
                }
                _ => objective += dmax2,
            }
        }
        (a, b, objective / count)
    };
    let (mut a, mut b, mut objective) = assign(&t);
    let mut history = vec![objective];
    for _ in 0..opts.max_iterations {
        let Some(delta) = kabsch(&a, &b) else { break };
        let candidate = delta.compose(&t);
        let (na, nb, next) = assign(&candidate);
        if next > objective {
            break;
        }
        t = candidate;
        history.push(next);
        let done = objective - next <= opts.relative_tolerance * objective.max(f64::MIN_POSITIVE);
        (a, b, objective) = (na, nb, next);
        if done {
            break;
        }
    }
    finish(src, tgt, t, history, opts, 1.0)
}

/// Point-to-point ICP at a single scale (colors ignored). If the target has
/// normals they are used for the conditioning check; otherwise that check
/// is skipped.
pub fn icp_point_to_point(
    source: &ColoredPointCloud,
    target: &ColoredPointCloud,
    init: &RigidTransform,
    opts: &LevelOptions,
) -> Result<RegistrationResult, RegistrationError> {
    check_inputs(source, target)?;
    let mut opts = opts.clone();
    if !target.has_normals() {
        opts.degeneracy_threshold = f64::NEG_INFINITY;
        let with = target.clone().with_normals(vec![Vector3::zeros(); target.len()]).expect("zero normals are valid");
        let prepared = PreparedTarget::new(&with, false, &opts)?;
        let mut res = point_to_point_prepared(source, &prepared, init, &opts);
        // `finish` saw only zero normals; conditioning was not assessed.
        if let Some(RegistrationFailure::Degenerate { .. }) = res.failure {
            res.failure = None;
            res.converged = true;
        }
        return Ok(res);
    }
    let prepared = PreparedTarget::new(target, false, &opts)?;
    Ok(point_to_point_prepared(source, &prepared, init, &opts))
}
