//! Labeled 20 Hz skeleton recordings: the six-subtask action set, CSV
//! read/write, validation, and plant-side linear interpolation.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use crate::geometry::SKELETON_JOINTS;
use crate::{Result, SapError};

/// Recording rate and frame spacing.
pub const FRAME_DT: f64 = 0.05;

/// Skeleton index of the right hand (canonical bone map: right arm chain
/// runs 9-10-11-12, ending at the hand).
pub const RIGHT_HAND_JOINT: usize = 12;

/// The six subtasks of the screw-driver collaboration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    PickUp,
    MoveForward,
    TakeTheScrew,
    OperateScrewDriver,
    MoveBackward,
    PutDown,
}

pub const ALL_ACTIONS: [Action; 6] = [
    Action::PickUp,
    Action::MoveForward,
    Action::TakeTheScrew,
    Action::OperateScrewDriver,
    Action::MoveBackward,
    Action::PutDown,
];

/// Subtasks that trigger robot motion planning.
pub const INTERACTIVE_ACTIONS: [Action; 2] = [Action::PickUp, Action::MoveForward];

impl Action {
    pub fn as_str(&self) -> &'static str {
        match self {
            Action::PickUp => "pick up",
            Action::MoveForward => "move forward",
            Action::TakeTheScrew => "take the screw",
            Action::OperateScrewDriver => "operate screw-driver",
            Action::MoveBackward => "move backward",
            Action::PutDown => "put down",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ALL_ACTIONS
            .iter()
            .find(|a| a.as_str() == s)
            .copied()
            .ok_or_else(|| SapError::Argument(format!("unknown action label '{s}'")))
    }

    pub fn is_interactive(&self) -> bool {
        INTERACTIVE_ACTIONS.contains(self)
    }
}

/// One 20 Hz sample: timestamp, subtask label and 32 joint positions.
#[derive(Debug, Clone)]
pub struct SkeletonFrame {
    pub t: f64,
    pub label: Action,
    pub joints: Vec<Vector3<f64>>,
}

/// A labeled skeleton recording at 20 Hz.
#[derive(Debug, Clone)]
pub struct SkeletonTrajectory {
    pub frames: Vec<SkeletonFrame>,
}

impl SkeletonTrajectory {
    pub fn new(frames: Vec<SkeletonFrame>) -> Result<Self> {
        let traj = Self { frames };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(SapError::Argument("empty skeleton trajectory".into()));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.joints.len() != SKELETON_JOINTS {
                return Err(SapError::Argument(format!(
                    "frame {i}: expected {SKELETON_JOINTS} joints, got {}",
                    f.joints.len()
                )));
            }
            if f.joints.iter().any(|p| !p.iter().all(|v| v.is_finite())) || !f.t.is_finite() {
                return Err(SapError::Argument(format!("frame {i}: non-finite data")));
            }
            if i > 0 {
                let dt = f.t - self.frames[i - 1].t;
                if (dt - FRAME_DT).abs() > 1e-9 {
                    return Err(SapError::Argument(format!(
                        "frame {i}: spacing {dt} s, expected {FRAME_DT} s"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.frames.last().map_or(0.0, |f| f.t - self.frames[0].t)
    }

    /// Linear interpolation of the joints at absolute time `t`, clamped to
    /// the recording's range.
    pub fn interpolate(&self, t: f64) -> Vec<Vector3<f64>> {
        let t0 = self.frames[0].t;
        let s = ((t - t0) / FRAME_DT).clamp(0.0, (self.len() - 1) as f64);
        let i = (s.floor() as usize).min(self.len() - 1);
        let j = (i + 1).min(self.len() - 1);
        let a = s - i as f64;
        self.frames[i]
            .joints
            .iter()
            .zip(self.frames[j].joints.iter())
            .map(|(p, q)| p * (1.0 - a) + q * a)
            .collect()
    }

    /// Index of the first frame carrying `label`, if any.
    pub fn first_frame_with(&self, label: Action) -> Option<usize> {
        self.frames.iter().position(|f| f.label == label)
    }

    /// Index of the last frame of the first contiguous block of `label`.
    pub fn end_of_first_block(&self, label: Action) -> Option<usize> {
        let start = self.first_frame_with(label)?;
        let mut end = start;
        while end + 1 < self.len() && self.frames[end + 1].label == label {
            end += 1;
        }
        Some(end)
    }

    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SapError::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        let mut frames = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 || line.trim().is_empty() {
                continue; // header
            }
            let err = |msg: String| SapError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg,
            };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 2 + 3 * SKELETON_JOINTS {
                return Err(err(format!(
                    "expected {} fields, got {}",
                    2 + 3 * SKELETON_JOINTS,
                    fields.len()
                )));
            }
            let t: f64 = fields[0]
                .trim()
                .parse()
                .map_err(|_| err(format!("bad timestamp '{}'", fields[0])))?;
            let label = Action::parse(fields[1].trim()).map_err(|e| err(e.to_string()))?;
            let mut joints = Vec::with_capacity(SKELETON_JOINTS);
            for j in 0..SKELETON_JOINTS {
                let mut c = [0.0; 3];
                for (k, cv) in c.iter_mut().enumerate() {
                    *cv = fields[2 + 3 * j + k]
                        .trim()
                        .parse()
                        .map_err(|_| err(format!("bad coordinate for joint {j}")))?;
                }
                joints.push(Vector3::new(c[0], c[1], c[2]));
            }
            frames.push(SkeletonFrame { t, label, joints });
        }
        Self::new(frames)
    }

    pub fn to_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        write!(w, "t,label")?;
        for j in 0..SKELETON_JOINTS {
            write!(w, ",j{j}x,j{j}y,j{j}z")?;
        }
        writeln!(w)?;
        for f in &self.frames {
            write!(w, "{},{}", f.t, f.label.as_str())?;
            for p in &f.joints {
                write!(w, ",{},{},{}", p.x, p.y, p.z)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.to_csv(&mut buf)
            .map_err(|e| SapError::Argument(e.to_string()))?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}
