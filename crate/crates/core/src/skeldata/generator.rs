//! Procedural skeleton-action corpora.
//!
//! Every class is a parametric motion template driving a small 3D body model
//! (segment angles plus root motion). Each sample draws its own amplitude,
//! tempo, phase, body proportions and viewing angle, is posed frame by frame,
//! grounded, projected orthographically onto the image plane and expressed in
//! normalized scene units (roughly [-1, 1]).

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::topology::*;
use super::{Corpus, SkelError, SkeletonSequence};
use crate::seeds::derive_seed;

/// Corpus family. The two families share the skeleton but no motion templates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    A,
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Motion {
    Wave,
    Squat,
    Walk,
    Jump,
    Sit,
    Turn,
    Kick,
    Clap,
    ArmCircles,
    Bow,
    Punch,
    SideStep,
    RaiseHands,
    Lunge,
}

impl Motion {
    pub const FAMILY_A: [Motion; 8] = [
        Motion::Wave,
        Motion::Squat,
        Motion::Walk,
        Motion::Jump,
        Motion::Sit,
        Motion::Turn,
        Motion::Kick,
        Motion::Clap,
    ];
    pub const FAMILY_B: [Motion; 6] = [
        Motion::ArmCircles,
        Motion::Bow,
        Motion::Punch,
        Motion::SideStep,
        Motion::RaiseHands,
        Motion::Lunge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Motion::Wave => "wave",
            Motion::Squat => "squat",
            Motion::Walk => "walk",
            Motion::Jump => "jump",
            Motion::Sit => "sit",
            Motion::Turn => "turn",
            Motion::Kick => "kick",
            Motion::Clap => "clap",
            Motion::ArmCircles => "arm_circles",
            Motion::Bow => "bow",
            Motion::Punch => "punch",
            Motion::SideStep => "side_step",
            Motion::RaiseHands => "raise_hands",
            Motion::Lunge => "lunge",
        }
    }

    pub fn family(self) -> Family {
        if Self::FAMILY_A.contains(&self) {
            Family::A
        } else {
            Family::B
        }
    }

    pub fn from_name(name: &str) -> Option<Motion> {
        Self::FAMILY_A
            .iter()
            .chain(Self::FAMILY_B.iter())
            .copied()
            .find(|m| m.name() == name)
    }

    /// Nominal period in frames.
    fn period(self) -> f64 {
        match self {
            Motion::Wave => 14.0,
            Motion::Squat => 30.0,
            Motion::Walk => 26.0,
            Motion::Jump => 22.0,
            Motion::Sit => 42.0,
            Motion::Turn => 36.0,
            Motion::Kick => 20.0,
            Motion::Clap => 12.0,
            Motion::ArmCircles => 16.0,
            Motion::Bow => 34.0,
            Motion::Punch => 14.0,
            Motion::SideStep => 24.0,
            Motion::RaiseHands => 34.0,
            Motion::Lunge => 34.0,
        }
    }
}

/// Relative and absolute spreads of the per-sample random draws.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterScales {
    /// Relative half-width of the motion amplitude draw.
    pub amplitude: f64,
    /// Relative half-width of the tempo draw.
    pub tempo: f64,
    /// Relative half-width of the body-size and limb-proportion draws.
    pub proportions: f64,
    /// Half-width of the camera yaw draw, in degrees.
    pub view_yaw_deg: f64,
    /// Half-width of the root placement draw, in scene units.
    pub position: f64,
    /// Standard deviation of per-frame joint measurement noise.
    pub frame_noise: f64,
}

impl Default for JitterScales {
    fn default() -> Self {
        Self {
            amplitude: 0.2,
            tempo: 0.15,
            proportions: 0.08,
            view_yaw_deg: 30.0,
            position: 0.1,
            frame_noise: 0.004,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub family: Family,
    /// Motion template names; all must belong to `family`.
    pub classes: Vec<String>,
    pub sequences_per_class: usize,
    pub frames: usize,
    /// Falls back to the family A profile when omitted.
    #[serde(default)]
    pub jitter: JitterScales,
}

impl GeneratorConfig {
    pub fn family_a() -> Self {
        Self::for_family(Family::A, &Motion::FAMILY_A)
    }

    /// Family B stands in for a separately recorded dataset: noisier joint
    /// estimates and a wider spread of viewpoints than family A.
    pub fn family_b() -> Self {
        Self {
            jitter: JitterScales {
                view_yaw_deg: 45.0,
                frame_noise: 0.06,
                ..JitterScales::default()
            },
            ..Self::for_family(Family::B, &Motion::FAMILY_B)
        }
    }

    fn for_family(family: Family, motions: &[Motion]) -> Self {
        Self {
            family,
            classes: motions.iter().map(|m| m.name().to_string()).collect(),
            sequences_per_class: 40,
            frames: 60,
            jitter: JitterScales::default(),
        }
    }

    pub fn motions(&self) -> Result<Vec<Motion>, SkelError> {
        if self.classes.is_empty() {
            return Err(SkelError::Contract("generator needs at least one class".into()));
        }
        if self.sequences_per_class == 0 {
            return Err(SkelError::Contract("generator needs at least one sequence per class".into()));
        }
        if self.frames < super::CLIP_FRAMES {
            return Err(SkelError::Contract(format!(
                "sequences need at least {} frames, got {}",
                super::CLIP_FRAMES,
                self.frames
            )));
        }
        let mut out = Vec::with_capacity(self.classes.len());
        for name in &self.classes {
            let motion = Motion::from_name(name)
                .ok_or_else(|| SkelError::InvalidConfig(format!("unknown motion template `{name}`")))?;
            if motion.family() != self.family {
                return Err(SkelError::InvalidConfig(format!(
                    "motion `{name}` does not belong to family {:?}",
                    self.family
                )));
            }
            if out.contains(&motion) {
                return Err(SkelError::InvalidConfig(format!("motion `{name}` listed twice")));
            }
            out.push(motion);
        }
        Ok(out)
    }
}

/// Segment orientation: abduction (towards the body side) and flexion (forwards),
/// both measured from hanging straight down.
#[derive(Clone, Copy, Debug, Default)]
struct Seg {
    abd: f64,
    flex: f64,
}

#[derive(Clone, Copy, Debug, Default)]
struct Limb {
    upper: Seg,
    lower: Seg,
}

impl Limb {
    fn straight(abd: f64, flex: f64) -> Self {
        let s = Seg { abd, flex };
        Limb { upper: s, lower: s }
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Pose {
    /// Root translation in the ground plane (x, z) and extra height (jumps).
    shift: [f64; 3],
    lean: f64,
    side_lean: f64,
    yaw: f64,
    head_pitch: f64,
    /// Right, left.
    arms: [Limb; 2],
    legs: [Limb; 2],
}

#[derive(Clone, Copy, Debug)]
struct Body {
    torso: f64,
    shoulder_half: f64,
    hip_half: f64,
    upper_arm: f64,
    forearm: f64,
    thigh: f64,
    shin: f64,
    head: f64,
}

impl Body {
    fn sample<R: Rng>(rng: &mut R, spread: f64) -> Self {
        let scale = 1.0 + rng.random_range(-spread..=spread);
        let part = spread * 0.6;
        let mut j = |base: f64, s: f64| base * (1.0 + rng.random_range(-s..=s));
        Body {
            torso: j(0.52, part) * scale,
            shoulder_half: j(0.18, part) * scale,
            hip_half: j(0.1, part) * scale,
            upper_arm: j(0.3, part) * scale,
            forearm: j(0.27, part) * scale,
            thigh: j(0.43, part) * scale,
            shin: j(0.42, part) * scale,
            head: j(0.2, part) * scale,
        }
    }
}

/// Sign of the body side along x for the subject facing the camera: right = -1.
const SIDES: [f64; 2] = [-1.0, 1.0];

fn seg_dir(seg: Seg, side: f64) -> [f64; 3] {
    [
        side * seg.abd.sin(),
        -seg.abd.cos() * seg.flex.cos(),
        seg.abd.cos() * seg.flex.sin(),
    ]
}

fn add(a: [f64; 3], b: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

fn rot_y(p: [f64; 3], yaw: f64) -> [f64; 3] {
    let (s, c) = yaw.sin_cos();
    [c * p[0] + s * p[2], p[1], -s * p[0] + c * p[2]]
}

/// 3D joint positions with the pelvis at the origin, before body yaw.
fn skeleton(body: &Body, pose: &Pose) -> [[f64; 3]; 18] {
    let mut j = [[0.0; 3]; 18];
    let (sl, cl) = pose.lean.sin_cos();
    let (ss, cs) = pose.side_lean.sin_cos();
    let up = [ss, cl * cs, sl * cs];
    let fwd = [0.0, -sl, cl];
    let neck = add([0.0; 3], up, body.torso);
    j[NECK] = neck;
    let shoulders = [R_SHOULDER, L_SHOULDER];
    let elbows = [R_ELBOW, L_ELBOW];
    let wrists = [R_WRIST, L_WRIST];
    let hips = [R_HIP, L_HIP];
    let knees = [R_KNEE, L_KNEE];
    let ankles = [R_ANKLE, L_ANKLE];
    for k in 0..2 {
        let side = SIDES[k];
        let sh = add(add(neck, [side, 0.0, 0.0], body.shoulder_half), up, -0.04);
        j[shoulders[k]] = sh;
        let arm = pose.arms[k];
        let arm_upper = Seg { abd: arm.upper.abd, flex: arm.upper.flex + pose.lean };
        let arm_lower = Seg { abd: arm.lower.abd, flex: arm.lower.flex + pose.lean };
        j[elbows[k]] = add(sh, seg_dir(arm_upper, side), body.upper_arm);
        j[wrists[k]] = add(j[elbows[k]], seg_dir(arm_lower, side), body.forearm);
        let hip = [side * body.hip_half, 0.0, 0.0];
        j[hips[k]] = hip;
        let leg = pose.legs[k];
        j[knees[k]] = add(hip, seg_dir(leg.upper, side), body.thigh);
        j[ankles[k]] = add(j[knees[k]], seg_dir(leg.lower, side), body.shin);
    }
    let (hs, hc) = pose.head_pitch.sin_cos();
    let head_up = add(up.map(|x| x * hc), fwd, hs);
    let nose = add(add(neck, head_up, body.head), fwd, 0.07);
    j[NOSE] = nose;
    for (k, (eye, ear)) in [(R_EYE, R_EAR), (L_EYE, L_EAR)].into_iter().enumerate() {
        let side = SIDES[k];
        j[eye] = add(add(nose, [side, 0.0, 0.0], 0.035), head_up, 0.035);
        j[ear] = add(add(add(nose, [side, 0.0, 0.0], 0.075), head_up, 0.02), fwd, -0.08);
    }
    j
}

/// Smooth 0 -> 1 -> 0 cycle.
fn cycle(x: f64) -> f64 {
    0.5 * (1.0 - x.cos())
}

fn pose_at(motion: Motion, t: f64, omega: f64, phase: f64, amp: f64, dir: f64) -> Pose {
    let th = omega * t + phase;
    let s = th.sin();
    let rest_arm = Limb::straight(0.12, 0.0);
    let mut p = Pose {
        arms: [rest_arm; 2],
        ..Pose::default()
    };
    match motion {
        Motion::Wave => {
            p.arms[0] = Limb {
                upper: Seg { abd: 2.2, flex: 0.15 },
                lower: Seg { abd: 2.6 + 0.45 * amp * s, flex: 0.15 },
            };
            p.head_pitch = 0.05 * s;
        }
        Motion::Squat => {
            let d = amp * cycle(th);
            for k in 0..2 {
                p.legs[k] = Limb {
                    upper: Seg { abd: 0.15 * d, flex: 1.45 * d },
                    lower: Seg { abd: 0.05 * d, flex: -0.75 * d },
                };
                p.arms[k] = Limb::straight(0.1, 1.5 * d);
            }
            p.lean = 0.45 * d;
        }
        Motion::Walk => {
            p.yaw = dir * FRAC_PI_2;
            let swing = 0.45 * amp;
            for k in 0..2 {
                let sk = if k == 0 { s } else { -s };
                let bend = 0.6 * amp * (th + if k == 0 { 0.0 } else { PI } + FRAC_PI_2).sin().max(0.0);
                p.legs[k] = Limb {
                    upper: Seg { abd: 0.0, flex: swing * sk },
                    lower: Seg { abd: 0.0, flex: swing * sk - bend },
                };
                let arm = -0.4 * amp * sk;
                p.arms[k] = Limb {
                    upper: Seg { abd: 0.08, flex: arm },
                    lower: Seg { abd: 0.08, flex: arm + 0.3 },
                };
            }
            p.shift = [dir * 0.012 * amp * t, 0.015 * (2.0 * th).sin().abs(), 0.0];
        }
        Motion::Jump => {
            let air = s.max(0.0);
            let crouch = (-s).max(0.0);
            p.shift[1] = 0.22 * amp * air;
            for k in 0..2 {
                p.legs[k] = Limb {
                    upper: Seg { abd: 0.05, flex: 0.8 * crouch },
                    lower: Seg { abd: 0.05, flex: -0.9 * crouch },
                };
                p.arms[k] = Limb::straight(0.3 + 0.6 * air, 2.6 * air - 0.5 * crouch);
            }
            p.lean = 0.35 * crouch;
        }
        Motion::Sit => {
            let d = amp.min(1.1) * cycle(th);
            for k in 0..2 {
                p.legs[k] = Limb {
                    upper: Seg { abd: 0.1 * d, flex: 1.5 * d },
                    lower: Seg { abd: 0.0, flex: -0.05 * d },
                };
                p.arms[k] = Limb {
                    upper: Seg { abd: 0.15, flex: 0.5 * d },
                    lower: Seg { abd: 0.15, flex: 1.3 * d },
                };
            }
            p.lean = 0.15 * d;
            p.shift[2] = -0.35 * d;
        }
        Motion::Turn => {
            p.yaw = 1.3 * amp * s;
            p.arms = [Limb::straight(0.35, 0.1); 2];
            p.head_pitch = -0.05;
        }
        Motion::Kick => {
            let k = s.max(0.0).powi(2) * amp;
            p.legs[0] = Limb {
                upper: Seg { abd: 0.05, flex: 1.35 * k },
                lower: Seg { abd: 0.05, flex: 1.0 * k },
            };
            p.arms = [Limb::straight(0.55, 0.2 - 0.3 * k), Limb::straight(0.55, 0.3 * k)];
            p.lean = -0.25 * k;
        }
        Motion::Clap => {
            let open = cycle(th) * amp;
            for k in 0..2 {
                p.arms[k] = Limb {
                    upper: Seg { abd: 0.25 + 0.2 * open, flex: 1.2 },
                    lower: Seg { abd: -0.25 + 0.75 * open, flex: 1.45 },
                };
            }
        }
        Motion::ArmCircles => {
            for k in 0..2 {
                p.arms[k] = Limb::straight(1.45 + 0.45 * amp * th.cos(), 0.5 * amp * s);
            }
        }
        Motion::Bow => {
            let d = amp * cycle(th);
            p.lean = 0.95 * d;
            p.head_pitch = 0.3 * d;
            p.arms = [Limb::straight(0.1, -0.95 * d); 2];
        }
        Motion::Punch => {
            for k in 0..2 {
                let pk = if k == 0 { s } else { -s }.max(0.0) * amp.min(1.15);
                p.arms[k] = Limb {
                    upper: Seg { abd: 0.2 * (1.0 - pk), flex: 0.4 + 1.15 * pk },
                    lower: Seg { abd: 0.0, flex: 2.4 - 0.85 * pk },
                };
            }
            p.yaw = 0.2 * s;
        }
        Motion::SideStep => {
            for k in 0..2 {
                let open = if k == 0 { s } else { -s }.max(0.0);
                p.legs[k] = Limb::straight(0.35 * amp * open, 0.05);
                p.arms[k] = Limb::straight(0.25 + 0.25 * open, 0.0);
            }
            p.shift[0] = 0.18 * amp * (0.5 * th).sin() * dir;
        }
        Motion::RaiseHands => {
            let d = amp.min(1.05) * cycle(th);
            p.arms = [Limb::straight(0.1 + 2.8 * d, 0.15); 2];
            p.head_pitch = -0.2 * d;
        }
        Motion::Lunge => {
            let d = amp * cycle(th);
            p.legs[0] = Limb {
                upper: Seg { abd: 0.0, flex: 1.0 * d },
                lower: Seg { abd: 0.0, flex: -0.25 * d },
            };
            p.legs[1] = Limb {
                upper: Seg { abd: 0.0, flex: -0.45 * d },
                lower: Seg { abd: 0.0, flex: -1.4 * d },
            };
            p.arms = [Limb::straight(0.15, 0.4 * d); 2];
            p.lean = 0.1 * d;
        }
    }
    p
}

fn generate_sequence(
    motion: Motion,
    frames: usize,
    jitter: &JitterScales,
    label: usize,
    source: String,
    rng: &mut ChaCha8Rng,
) -> SkeletonSequence {
    let body = Body::sample(rng, jitter.proportions);
    let amp = 1.0 + rng.random_range(-jitter.amplitude..=jitter.amplitude);
    let period = motion.period() * (1.0 + rng.random_range(-jitter.tempo..=jitter.tempo));
    let omega = TAU / period;
    let phase = rng.random_range(0.0..TAU);
    let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let view = rng.random_range(-jitter.view_yaw_deg..=jitter.view_yaw_deg).to_radians();
    let origin = [
        rng.random_range(-jitter.position..=jitter.position),
        rng.random_range(-jitter.position..=jitter.position),
    ];
    let image_scale = 1.0 + rng.random_range(-jitter.proportions..=jitter.proportions);
    let noise = Normal::new(0.0, jitter.frame_noise.max(0.0)).expect("finite noise scale");
    let center = frames as f64 / 2.0;

    let out = (0..frames)
        .map(|f| {
            let t = f as f64 - center;
            let pose = pose_at(motion, t, omega, phase, amp, dir);
            let joints = skeleton(&body, &pose);
            let ground = joints[R_ANKLE][1].min(joints[L_ANKLE][1]);
            (0..18)
                .map(|j| {
                    let p = rot_y(joints[j], pose.yaw);
                    let world = [
                        p[0] + pose.shift[0] + origin[0],
                        p[1] - ground + pose.shift[1],
                        p[2] + pose.shift[2] + origin[1],
                    ];
                    let cam = rot_y(world, view);
                    [
                        cam[0] * image_scale + noise.sample(rng),
                        (cam[1] - 0.9) * image_scale + noise.sample(rng),
                    ]
                })
                .collect()
        })
        .collect();
    SkeletonSequence {
        frames: out,
        label,
        source,
    }
}

/// Deterministic in `(config, seed)`.
pub fn generate_corpus(config: &GeneratorConfig, seed: u64) -> Result<Corpus, SkelError> {
    let motions = config.motions()?;
    let family = match config.family {
        Family::A => "A",
        Family::B => "B",
    };
    let mut sequences = Vec::with_capacity(motions.len() * config.sequences_per_class);
    for (label, &motion) in motions.iter().enumerate() {
        for i in 0..config.sequences_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[label as u64, i as u64]));
            let source = format!("{family}/{}/{i:03}", motion.name());
            sequences.push(generate_sequence(motion, config.frames, &config.jitter, label, source, &mut rng));
        }
    }
    Ok(Corpus {
        topology: SkeletonTopology::body18(),
        sequences,
        class_names: motions.iter().map(|m| m.name().to_string()).collect(),
        seed,
    })
}
