use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{check_severity, corrupt_frame, NoiseId};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::sensorsim::SensorStream;

/// Frames `[start, end)` corrupted with `noise` at `severity`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Episode {
    pub start: usize,
    pub end: usize,
    pub noise: NoiseId,
    pub severity: u8,
}

/// Ordered, non-overlapping corruption episodes over a sequence of
/// `frames` frames. Frames outside every episode are clean.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    pub frames: usize,
    #[serde(default)]
    pub episodes: Vec<Episode>,
}

impl NoiseSchedule {
    pub fn new(frames: usize, episodes: Vec<Episode>) -> Result<Self> {
        let s = NoiseSchedule { frames, episodes };
        s.validate()?;
        Ok(s)
    }

    pub fn clean(frames: usize) -> Self {
        NoiseSchedule {
            frames,
            episodes: Vec::new(),
        }
    }

    /// One episode `[t0, t1)` inside an otherwise clean sequence.
    pub fn single_shift(frames: usize, t0: usize, t1: usize, noise: NoiseId, severity: u8) -> Result<Self> {
        NoiseSchedule::new(
            frames,
            vec![Episode {
                start: t0,
                end: t1,
                noise,
                severity,
            }],
        )
    }

    /// `noises` in order, each for `segment` frames, repeated `cycles`
    /// times back to back starting at frame 0.
    pub fn cyclic(noises: &[NoiseId], segment: usize, cycles: usize, severity: u8) -> Result<Self> {
        let mut episodes = Vec::new();
        let mut t = 0;
        for _ in 0..cycles {
            for &n in noises {
                episodes.push(Episode {
                    start: t,
                    end: t + segment,
                    noise: n,
                    severity,
                });
                t += segment;
            }
        }
        NoiseSchedule::new(t, episodes)
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev_end = 0;
        for (i, e) in self.episodes.iter().enumerate() {
            check_severity(e.severity)?;
            if e.start >= e.end {
                return Err(Error::invalid(format!("episode {i} is empty or reversed")));
            }
            if e.start < prev_end {
                return Err(Error::invalid(format!(
                    "episode {i} overlaps or precedes the previous episode"
                )));
            }
            if e.end > self.frames {
                return Err(Error::invalid(format!(
                    "episode {i} ends at {} beyond {} frames",
                    e.end, self.frames
                )));
            }
            prev_end = e.end;
        }
        Ok(())
    }

    pub fn episode_at(&self, frame: usize) -> Option<&Episode> {
        self.episodes.iter().find(|e| e.start <= frame && frame < e.end)
    }

    /// Active noise of every frame.
    pub fn labels(&self) -> Vec<NoiseId> {
        (0..self.frames)
            .map(|t| self.episode_at(t).map_or(NoiseId::Clean, |e| e.noise))
            .collect()
    }

    /// Distinct noises in order of first appearance.
    pub fn noises(&self) -> Vec<NoiseId> {
        let mut out: Vec<NoiseId> = Vec::new();
        for e in &self.episodes {
            if e.noise != NoiseId::Clean && !out.contains(&e.noise) {
                out.push(e.noise);
            }
        }
        out
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schedule serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: NoiseSchedule = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }
}

impl fmt::Display for NoiseSchedule {
    /// Inline form `frames=N;noise:start-end:severity;...`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "frames={}", self.frames)?;
        for e in &self.episodes {
            write!(f, ";{}:{}-{}:{}", e.noise, e.start, e.end, e.severity)?;
        }
        Ok(())
    }
}

impl FromStr for NoiseSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: &str| Error::invalid(format!("schedule {s:?}: {m}"));
        let mut parts = s.split(';').map(str::trim).filter(|p| !p.is_empty());
        let head = parts.next().ok_or_else(|| bad("empty"))?;
        let frames = head
            .strip_prefix("frames=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("must start with frames=N"))?;
        let mut episodes = Vec::new();
        for p in parts {
            let fields: Vec<&str> = p.split(':').collect();
            if fields.len() != 3 {
                return Err(bad("episodes look like noise:start-end:severity"));
            }
            let (a, b) = fields[1].split_once('-').ok_or_else(|| bad("range is start-end"))?;
            episodes.push(Episode {
                noise: fields[0].parse()?,
                start: a.trim().parse().map_err(|_| bad("bad start"))?,
                end: b.trim().parse().map_err(|_| bad("bad end"))?,
                severity: fields[2].trim().parse().map_err(|_| bad("bad severity"))?,
            });
        }
        NoiseSchedule::new(frames, episodes)
    }
}

/// Corrupts the frames of `stream` according to `sched`. IMU and ground
/// truth are carried over untouched. Returns per-frame labels.
pub fn apply_schedule(stream: &SensorStream, sched: &NoiseSchedule, seed: u64) -> Result<(SensorStream, Vec<NoiseId>)> {
    apply_schedule_with(stream, sched, seed, Exec::default())
}

pub fn apply_schedule_with(
    stream: &SensorStream,
    sched: &NoiseSchedule,
    seed: u64,
    exec: Exec,
) -> Result<(SensorStream, Vec<NoiseId>)> {
    sched.validate()?;
    if sched.frames != stream.len() {
        return Err(Error::invalid(format!(
            "schedule covers {} frames, stream has {}",
            sched.frames,
            stream.len()
        )));
    }
    let frames = stream.frames();
    let out = exec.try_map(frames.len(), |t| match sched.episode_at(t) {
        None => Ok(frames[t].clone()),
        Some(e) => corrupt_frame(&frames[t], e.noise, e.severity, seed, t as u64),
    })?;
    Ok((stream.with_frames(out)?, sched.labels()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_rejects_overlap_and_order() {
        let e = |s, t| Episode {
            start: s,
            end: t,
            noise: NoiseId::Blur,
            severity: 3,
        };
        assert!(NoiseSchedule::new(10, vec![e(0, 5), e(4, 8)]).is_err());
        assert!(NoiseSchedule::new(10, vec![e(5, 8), e(0, 3)]).is_err());
        assert!(NoiseSchedule::new(10, vec![e(5, 11)]).is_err());
        assert!(NoiseSchedule::new(10, vec![e(3, 3)]).is_err());
        assert!(NoiseSchedule::new(10, vec![e(0, 5), e(5, 10)]).is_ok());
    }

    #[test]
    fn labels_follow_episodes() {
        let s = NoiseSchedule::single_shift(10, 2, 6, NoiseId::Rain, 2).unwrap();
        let l = s.labels();
        assert_eq!(l.iter().filter(|&&n| n == NoiseId::Rain).count(), 4);
        assert_eq!(l[1], NoiseId::Clean);
        assert_eq!(l[2], NoiseId::Rain);
        assert_eq!(l[6], NoiseId::Clean);
    }

    #[test]
    fn cyclic_layout() {
        let s = NoiseSchedule::cyclic(&[NoiseId::Blur, NoiseId::Contrast], 5, 2, 3).unwrap();
        assert_eq!(s.frames, 20);
        assert_eq!(s.episodes.len(), 4);
        assert_eq!(s.noises(), vec![NoiseId::Blur, NoiseId::Contrast]);
        assert_eq!(s.labels()[12], NoiseId::Blur);
    }

    #[test]
    fn inline_and_toml_forms_round_trip() {
        let s = NoiseSchedule::cyclic(&[NoiseId::Blur, NoiseId::Brightness], 4, 1, 2).unwrap();
        assert_eq!(s.to_string().parse::<NoiseSchedule>().unwrap(), s);
        assert_eq!(NoiseSchedule::from_toml(&s.to_toml()).unwrap(), s);
        assert!("frames=5;blur:0-3".parse::<NoiseSchedule>().is_err());
        assert!("blur:0-3:1".parse::<NoiseSchedule>().is_err());
    }
}
