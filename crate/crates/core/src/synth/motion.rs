//! Procedural gaits and dual-quaternion skinning.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DualQuaternion, Isometry3, Point3, Translation3, UnitDualQuaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::body::{Body, Bone, NUM_BONES};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::{MotionSequence, TriMesh};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    ArmRaise,
    KneeRaise,
    WalkCycle,
    RunCycle,
}

impl MotionKind {
    pub const ALL: [MotionKind; 4] = [
        MotionKind::ArmRaise,
        MotionKind::KneeRaise,
        MotionKind::WalkCycle,
        MotionKind::RunCycle,
    ];

    /// Whether the root travels along the heading.
    pub fn is_long_range(self) -> bool {
        matches!(self, MotionKind::WalkCycle | MotionKind::RunCycle)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MotionKind::ArmRaise => "arm_raise",
            MotionKind::KneeRaise => "knee_raise",
            MotionKind::WalkCycle => "walk_cycle",
            MotionKind::RunCycle => "run_cycle",
        }
    }
}

impl fmt::Display for MotionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MotionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MotionKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::validation(format!("unknown motion kind '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    pub kind: MotionKind,
    /// Number of frames, including the first.
    pub frames: usize,
    /// Scales every joint excursion and the stride; 1 is a natural gait.
    pub amplitude: f64,
    /// Full cycles over the sequence.
    pub cycles: f64,
    /// Phase offset in radians.
    pub phase: f64,
    /// Rotation of the body about +y in radians. The body walks along its own
    /// front, which is +z at heading 0 and +x at heading pi/2.
    pub heading: f64,
    /// Drives small secondary phase offsets between limbs.
    pub seed: u64,
}

impl MotionSpec {
    pub fn new(kind: MotionKind, frames: usize) -> Self {
        MotionSpec {
            kind,
            frames,
            amplitude: 1.0,
            cycles: 1.0,
            phase: 0.0,
            heading: 0.0,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(10..=400).contains(&self.frames) {
            return Err(Error::validation(format!(
                "motion length must be in [10, 400] frames, got {}",
                self.frames
            )));
        }
        for (name, v) in [
            ("amplitude", self.amplitude),
            ("cycles", self.cycles),
            ("phase", self.phase),
            ("heading", self.heading),
        ] {
            if !v.is_finite() {
                return Err(Error::validation(format!("{name} must be finite")));
            }
        }
        if self.amplitude < 0.0 || self.cycles <= 0.0 {
            return Err(Error::validation(
                "amplitude must be non-negative and cycles positive",
            ));
        }
        Ok(())
    }
}

/// Joint angles in radians for one frame.
#[derive(Clone, Copy, Debug, Default)]
struct Pose {
    /// Arm elevation above the horizontal (negative lowers toward the torso).
    shoulder_raise: [f64; 2],
    /// Forward arm swing.
    shoulder_swing: [f64; 2],
    elbow: [f64; 2],
    /// Forward leg flexion.
    hip: [f64; 2],
    knee: [f64; 2],
    neck: f64,
    lean: f64,
    /// Root offset along the heading and vertically.
    advance: f64,
    bob: f64,
}

const DEG: f64 = PI / 180.0;

/// (name, lower, upper) joint limits in degrees.
fn check_limits(p: &Pose, frame: usize) -> Result<()> {
    let mut checks: Vec<(&str, f64, f64, f64)> = Vec::new();
    for s in 0..2 {
        checks.push(("shoulder elevation", p.shoulder_raise[s], -90.0, 170.0));
        checks.push(("shoulder swing", p.shoulder_swing[s], -90.0, 90.0));
        checks.push(("elbow", p.elbow[s], 0.0, 150.0));
        checks.push(("hip", p.hip[s], -60.0, 125.0));
        checks.push(("knee", p.knee[s], 0.0, 150.0));
    }
    checks.push(("neck", p.neck, -45.0, 45.0));
    checks.push(("trunk lean", p.lean, -30.0, 45.0));
    for (name, v, lo, hi) in checks {
        let deg = v / DEG;
        if deg < lo - 1e-9 || deg > hi + 1e-9 {
            return Err(Error::validation(format!(
                "{name} angle {deg:.1} deg at frame {frame} is outside [{lo}, {hi}]"
            )));
        }
    }
    Ok(())
}

fn pos2(x: f64) -> f64 {
    let m = x.max(0.0);
    m * m
}

fn pose_at(spec: &MotionSpec, jitter: [f64; 2], leg_length: f64, t: usize) -> Pose {
    let u = t as f64 / (spec.frames - 1) as f64;
    let a = spec.amplitude;
    let p = 2.0 * PI * spec.cycles * u + spec.phase;
    let pa = p + jitter[0];
    let mut pose = Pose::default();
    match spec.kind {
        MotionKind::ArmRaise => {
            let r = a * 60.0 * DEG * p.sin();
            pose.shoulder_raise = [r, r];
            let e = a * 30.0 * DEG * 0.5 * (1.0 - pa.cos());
            pose.elbow = [e, e];
            pose.neck = a * 5.0 * DEG * p.sin();
        }
        MotionKind::KneeRaise => {
            let s = p.sin();
            pose.hip = [a * 80.0 * DEG * pos2(s), a * 80.0 * DEG * pos2(-s)];
            pose.knee = [a * 95.0 * DEG * pos2(s), a * 95.0 * DEG * pos2(-s)];
            pose.shoulder_raise = [-a * 55.0 * DEG; 2];
            let sw = a * 15.0 * DEG * pa.sin();
            pose.shoulder_swing = [-sw, sw];
        }
        MotionKind::WalkCycle | MotionKind::RunCycle => {
            let run = spec.kind == MotionKind::RunCycle;
            let (hip_amp, knee_amp, knee_base, arm_low, swing_amp, elbow, stride, bob, lean) = if run {
                (45.0, 95.0, 10.0, 70.0, 40.0, 85.0, 2.4, 0.03, 10.0)
            } else {
                (30.0, 55.0, 0.0, 65.0, 25.0, 15.0, 1.4, 0.01, 0.0)
            };
            let s = p.sin();
            let c = p.cos();
            pose.hip = [a * hip_amp * DEG * s, -a * hip_amp * DEG * s];
            pose.knee = [
                a * (knee_base + knee_amp * pos2(c)) * DEG,
                a * (knee_base + knee_amp * pos2(-c)) * DEG,
            ];
            pose.shoulder_raise = [-a * arm_low * DEG; 2];
            let sw = a * swing_amp * DEG * pa.sin();
            pose.shoulder_swing = [-sw, sw];
            pose.elbow = [a * elbow * DEG; 2];
            pose.neck = a * 4.0 * DEG * (p + jitter[1]).cos() - a * 4.0 * DEG;
            pose.lean = a * lean * DEG;
            pose.advance = a * stride * leg_length * spec.cycles * u;
            pose.bob = a * bob * (1.0 - (2.0 * p).cos());
        }
    }
    pose
}

fn rot(axis: Vector3<f64>, angle: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
}

/// Rotation by `r` about the point `j`.
fn about(j: Vec3, r: UnitQuaternion<f64>) -> Isometry3<f64> {
    let jv = Vector3::new(j[0], j[1], j[2]);
    Isometry3::from_parts(Translation3::from(jv - r * jv), r)
}

fn bone_transforms(body: &Body, spec: &MotionSpec, pose: &Pose) -> [Isometry3<f64>; NUM_BONES] {
    let x = Vector3::x();
    let y = Vector3::y();
    let z = Vector3::z();
    let heading = rot(y, spec.heading);
    let front = heading * z;
    let root = Isometry3::from_parts(
        Translation3::from(front * pose.advance + y * pose.bob),
        heading,
    ) * about(body.joints[Bone::Root as usize], rot(x, pose.lean));
    let mut out = [Isometry3::identity(); NUM_BONES];
    for b in Bone::ALL {
        let j = body.joints[b as usize];
        let local = match b {
            Bone::Root => Isometry3::identity(),
            Bone::Head => about(j, rot(x, pose.neck)),
            Bone::LeftUpperArm => about(
                j,
                rot(x, -pose.shoulder_swing[0]) * rot(z, pose.shoulder_raise[0]),
            ),
            Bone::RightUpperArm => about(
                j,
                rot(x, -pose.shoulder_swing[1]) * rot(z, -pose.shoulder_raise[1]),
            ),
            Bone::LeftForearm => about(j, rot(y, -pose.elbow[0])),
            Bone::RightForearm => about(j, rot(y, pose.elbow[1])),
            Bone::LeftThigh => about(j, rot(x, -pose.hip[0])),
            Bone::RightThigh => about(j, rot(x, -pose.hip[1])),
            Bone::LeftShin => about(j, rot(x, pose.knee[0])),
            Bone::RightShin => about(j, rot(x, pose.knee[1])),
        };
        out[b as usize] = match b.parent() {
            None => root,
            Some(p) => out[p as usize] * local,
        };
    }
    out
}

fn skin(body: &Body, transforms: &[Isometry3<f64>; NUM_BONES]) -> Vec<Vec3> {
    let dqs: Vec<UnitDualQuaternion<f64>> = transforms
        .iter()
        .map(UnitDualQuaternion::from_isometry)
        .collect();
    let reference = dqs[Bone::Root as usize];
    body.mesh()
        .vertices()
        .iter()
        .zip(&body.weights)
        .map(|(v, w)| {
            let mut acc = DualQuaternion::from_real_and_dual(
                nalgebra::Quaternion::new(0.0, 0.0, 0.0, 0.0),
                nalgebra::Quaternion::new(0.0, 0.0, 0.0, 0.0),
            );
            for (b, &wb) in w.iter().enumerate() {
                if wb == 0.0 {
                    continue;
                }
                let q = dqs[b].into_inner();
                let sign = if q.real.dot(&reference.real) < 0.0 { -1.0 } else { 1.0 };
                acc.real += q.real * (sign * wb);
                acc.dual += q.dual * (sign * wb);
            }
            let blended = UnitDualQuaternion::new_normalize(acc);
            let p = blended.transform_point(&Point3::new(v[0], v[1], v[2]));
            [p.x, p.y, p.z]
        })
        .collect()
}

/// Poses the body over time. Frames share the body's connectivity.
pub fn animate(body: &Body, spec: &MotionSpec) -> Result<MotionSequence> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jitter = [rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15)];
    let mut frames = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let pose = pose_at(spec, jitter, body.leg_length(), t);
        check_limits(&pose, t)?;
        let transforms = bone_transforms(body, spec, &pose);
        let verts = skin(body, &transforms);
        frames.push(body.mesh().with_vertices(verts)?);
    }
    MotionSequence::new(frames)
}

/// The body at rest, rotated to a heading; useful as a neutral target.
pub fn rest_pose(body: &Body, heading: f64) -> Result<TriMesh> {
    let q = rot(Vector3::y(), heading);
    let verts = body
        .mesh()
        .vertices()
        .iter()
        .map(|v| {
            let p = q * Point3::new(v[0], v[1], v[2]);
            [p.x, p.y, p.z]
        })
        .collect();
    body.mesh().with_vertices(verts)
}
