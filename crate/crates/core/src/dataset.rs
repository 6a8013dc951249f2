//! Trajectory dataset persistence.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic   "CAPNAV01"   8 bytes
//! version u32          currently 1
//! count   u64          number of records
//! records, fixed size given R rays and window k:
//!   episode id    u64
//!   step          u32
//!   capability    u8            0 reaching, 1 squeezing, 2 avoiding
//!   timestamp     f64
//!   goal_rel      2 × f64
//!   expert_action 3 × f64
//!   fine rays     4·R × f32
//!   coarse hist   (k−1)·4·(R/4) × f32
//!   flags         u8            bit0 episode-terminal, bit1 reached
//! ```
//!
//! Ray data is f32 (sensor precision), actions and goals stay f64 (label
//! precision). Per-episode metadata that has no slot in the fixed record
//! layout — the sampled camera FOV, success tag, duration — rides in a JSON
//! sidecar at `<path>.meta.json`.

use crate::error::{Error, Result};
use crate::sensing::SensingParams;
use crate::student::LabeledStep;
use crate::world::Capability;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const MAGIC: &[u8; 8] = b"CAPNAV01";
pub const VERSION: u32 = 1;

const FLAG_TERMINAL: u8 = 1;
const FLAG_REACHED: u8 = 1 << 1;

/// Collection-time facts about one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub capability: Capability,
    /// Sampled camera FOV for this episode, radians.
    pub fov: f64,
    pub success: bool,
    pub steps: u32,
    pub duration: f64,
}

/// Append-only store of labeled steps plus episode metadata.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryDataset {
    pub rays: usize,
    pub window: usize,
    pub steps: Vec<LabeledStep>,
    pub episodes: BTreeMap<u64, EpisodeMeta>,
}

impl TrajectoryDataset {
    pub fn new(sensing: &SensingParams) -> TrajectoryDataset {
        TrajectoryDataset {
            rays: sensing.rays,
            window: sensing.window,
            steps: Vec::new(),
            episodes: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    fn fine_len(&self) -> usize {
        4 * self.rays
    }

    fn coarse_len(&self) -> usize {
        (self.window - 1) * 4 * (self.rays / 4)
    }

    pub fn record_size(&self) -> usize {
        8 + 4 + 1 + 8 + 16 + 24 + self.fine_len() * 4 + self.coarse_len() * 4 + 1
    }

    /// Append one episode's steps with its metadata. The last step must be
    /// the only terminal one.
    pub fn push_episode(
        &mut self,
        episode_id: u64,
        steps: Vec<LabeledStep>,
        meta: EpisodeMeta,
    ) -> Result<()> {
        if steps.is_empty() {
            return Err(Error::Contract("push_episode with no steps".into()));
        }
        for (i, s) in steps.iter().enumerate() {
            if s.capability == Capability::Mixed {
                return Err(Error::Contract(
                    "labeled steps must carry a trainable capability, not mixed".into(),
                ));
            }
            if s.fine_rays.len() != self.fine_len() || s.coarse_history.len() != self.coarse_len() {
                return Err(Error::Contract(format!(
                    "step {i} ray layout does not match dataset (R={}, k={})",
                    self.rays, self.window
                )));
            }
            if s.episode_id != episode_id {
                return Err(Error::Contract("episode id mismatch in pushed steps".into()));
            }
            let is_last = i + 1 == steps.len();
            if s.terminal != is_last {
                return Err(Error::Contract(
                    "exactly the final step of an episode must be terminal".into(),
                ));
            }
        }
        if self.episodes.contains_key(&episode_id) {
            return Err(Error::Contract(format!("duplicate episode id {episode_id}")));
        }
        self.episodes.insert(episode_id, meta);
        self.steps.extend(steps);
        Ok(())
    }

    /// Merge another dataset collected with the same sensing layout.
    pub fn merge(&mut self, other: TrajectoryDataset) -> Result<()> {
        if other.rays != self.rays || other.window != self.window {
            return Err(Error::Contract("merging datasets with different layouts".into()));
        }
        for (id, meta) in other.episodes {
            if self.episodes.insert(id, meta).is_some() {
                return Err(Error::Contract(format!("duplicate episode id {id} on merge")));
            }
        }
        self.steps.extend(other.steps);
        Ok(())
    }

    pub fn counts_by_capability(&self) -> BTreeMap<Capability, usize> {
        let mut m = BTreeMap::new();
        for s in &self.steps {
            *m.entry(s.capability).or_insert(0) += 1;
        }
        m
    }

    fn encode_record(&self, s: &LabeledStep, out: &mut Vec<u8>) {
        out.extend_from_slice(&s.episode_id.to_le_bytes());
        out.extend_from_slice(&s.step_index.to_le_bytes());
        out.push(s.capability.code());
        out.extend_from_slice(&s.timestamp.to_le_bytes());
        out.extend_from_slice(&s.goal_rel[0].to_le_bytes());
        out.extend_from_slice(&s.goal_rel[1].to_le_bytes());
        for a in &s.expert_action {
            out.extend_from_slice(&a.to_le_bytes());
        }
        for r in &s.fine_rays {
            out.extend_from_slice(&r.to_le_bytes());
        }
        for r in &s.coarse_history {
            out.extend_from_slice(&r.to_le_bytes());
        }
        let mut flags = 0u8;
        if s.terminal {
            flags |= FLAG_TERMINAL;
        }
        if s.reached {
            flags |= FLAG_REACHED;
        }
        out.push(flags);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.steps.len() * self.record_size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.steps.len() as u64).to_le_bytes());
        for s in &self.steps {
            self.encode_record(s, &mut out);
        }
        out
    }

    fn sidecar_path(path: &Path) -> PathBuf {
        let mut p = path.as_os_str().to_owned();
        p.push(".meta.json");
        PathBuf::from(p)
    }

    /// Write the binary records plus the episode-metadata sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        let mut f =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        f.write_all(&bytes)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let sidecar = serde_json::json!({
            "rays": self.rays,
            "window": self.window,
            "episodes": self.episodes,
        });
        let sp = Self::sidecar_path(path);
        std::fs::write(&sp, serde_json::to_vec_pretty(&sidecar)?)
            .map_err(|e| Error::io(sp.display().to_string(), e))?;
        Ok(())
    }

    pub fn from_bytes(buf: &[u8], sensing: &SensingParams) -> Result<TrajectoryDataset> {
        let mut ds = TrajectoryDataset::new(sensing);
        if buf.len() < 20 {
            return Err(Error::Format {
                offset: 0,
                reason: "file shorter than the 20-byte header".into(),
            });
        }
        if &buf[..8] != MAGIC {
            return Err(Error::Format {
                offset: 0,
                reason: format!("bad dataset magic {:?}", &buf[..8]),
            });
        }
        let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format {
                offset: 8,
                reason: format!("unsupported dataset version {version}"),
            });
        }
        let count = u64::from_le_bytes(buf[12..20].try_into().unwrap()) as usize;
        let rec = ds.record_size();
        let expect = 20 + count * rec;
        if buf.len() != expect {
            let offset = buf.len().min(expect) as u64;
            return Err(Error::Format {
                offset,
                reason: format!(
                    "payload is {} bytes, header promises {count} records of {rec} bytes",
                    buf.len() - 20
                ),
            });
        }
        let fine_len = ds.fine_len();
        let coarse_len = ds.coarse_len();
        let mut pos = 20usize;
        for i in 0..count {
            let rec_start = pos as u64;
            let mut take = |n: usize| {
                let s = &buf[pos..pos + n];
                pos += n;
                s
            };
            let episode_id = u64::from_le_bytes(take(8).try_into().unwrap());
            let step_index = u32::from_le_bytes(take(4).try_into().unwrap());
            let cap_code = take(1)[0];
            let capability = match Capability::from_code(cap_code) {
                Some(c) if c != Capability::Mixed => c,
                _ => {
                    return Err(Error::Format {
                        offset: rec_start + 12,
                        reason: format!("record {i}: invalid capability code {cap_code}"),
                    })
                }
            };
            let timestamp = f64::from_le_bytes(take(8).try_into().unwrap());
            let goal_rel = [
                f64::from_le_bytes(take(8).try_into().unwrap()),
                f64::from_le_bytes(take(8).try_into().unwrap()),
            ];
            let mut expert_action = [0.0; 3];
            for a in &mut expert_action {
                *a = f64::from_le_bytes(take(8).try_into().unwrap());
            }
            let fine_rays: Vec<f32> = take(fine_len * 4)
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let coarse_history: Vec<f32> = take(coarse_len * 4)
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let flags = take(1)[0];
            if flags & !(FLAG_TERMINAL | FLAG_REACHED) != 0 {
                return Err(Error::Format {
                    offset: (pos - 1) as u64,
                    reason: format!("record {i}: unknown flag bits {flags:#04x}"),
                });
            }
            ds.steps.push(LabeledStep {
                episode_id,
                step_index,
                capability,
                timestamp,
                goal_rel,
                expert_action,
                fine_rays,
                coarse_history,
                terminal: flags & FLAG_TERMINAL != 0,
                reached: flags & FLAG_REACHED != 0,
                expert_obs_hash: 0,
            });
        }
        Ok(ds)
    }

    /// Load records and, when present, the episode-metadata sidecar.
    pub fn load(path: &Path, sensing: &SensingParams) -> Result<TrajectoryDataset> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut ds = Self::from_bytes(&buf, sensing)?;
        let sp = Self::sidecar_path(path);
        if sp.exists() {
            let raw = std::fs::read(&sp).map_err(|e| Error::io(sp.display().to_string(), e))?;
            let v: serde_json::Value = serde_json::from_slice(&raw)?;
            if let Some(eps) = v.get("episodes") {
                ds.episodes = serde_json::from_value(eps.clone())?;
            }
        }
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn sensing() -> SensingParams {
        SensingParams {
            rays: 8,
            ..SensingParams::default()
        }
    }

    fn random_episode(ds: &TrajectoryDataset, id: u64, n: usize, rng: &mut impl Rng) -> Vec<LabeledStep> {
        (0..n)
            .map(|i| LabeledStep {
                episode_id: id,
                step_index: i as u32,
                capability: Capability::Avoiding,
                timestamp: i as f64 * 0.1,
                goal_rel: [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)],
                expert_action: [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ],
                fine_rays: (0..ds.fine_len()).map(|_| rng.gen_range(0.01..4.0)).collect(),
                coarse_history: (0..ds.coarse_len()).map(|_| rng.gen_range(0.0..4.0)).collect(),
                terminal: i == n - 1,
                reached: i == n - 1,
                expert_obs_hash: rng.gen(),
            })
            .collect()
    }

    fn meta() -> EpisodeMeta {
        EpisodeMeta {
            capability: Capability::Avoiding,
            fov: 2.0,
            success: true,
            steps: 10,
            duration: 1.0,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let s = sensing();
        let mut ds = TrajectoryDataset::new(&s);
        let mut rng = crate::rng::stream(0, "ds", 0);
        for id in 0..10 {
            let steps = random_episode(&ds, id, 100, &mut rng);
            ds.push_episode(id, steps, meta()).unwrap();
        }
        assert_eq!(ds.len(), 1000);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.bin");
        ds.save(&p).unwrap();
        let back = TrajectoryDataset::load(&p, &s).unwrap();
        // Persisted payloads are bitwise equal; the in-memory expert hash is
        // collection-time metadata and is not part of the file contract.
        assert_eq!(back.to_bytes(), ds.to_bytes());
        assert_eq!(back.episodes, ds.episodes);
        let p2 = dir.path().join("d2.bin");
        back.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let s = sensing();
        let mut ds = TrajectoryDataset::new(&s);
        let mut rng = crate::rng::stream(1, "ds", 0);
        ds.push_episode(0, random_episode(&ds, 0, 5, &mut rng), meta()).unwrap();
        let bytes = ds.to_bytes();
        match TrajectoryDataset::from_bytes(&bytes[..bytes.len() - 3], &s) {
            Err(Error::Format { offset, .. }) => assert!(offset > 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn empty_dataset_round_trips() {
        let s = sensing();
        let ds = TrajectoryDataset::new(&s);
        let bytes = ds.to_bytes();
        let back = TrajectoryDataset::from_bytes(&bytes, &s).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn bad_magic_rejected() {
        let s = sensing();
        match TrajectoryDataset::from_bytes(b"WRONGMAG\x01\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00", &s) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("expected magic rejection, got {other:?}"),
        }
    }

    #[test]
    fn non_final_terminal_flag_rejected() {
        let s = sensing();
        let mut ds = TrajectoryDataset::new(&s);
        let mut rng = crate::rng::stream(2, "ds", 0);
        let mut steps = random_episode(&ds, 3, 4, &mut rng);
        steps[1].terminal = true;
        assert!(ds.push_episode(3, steps, meta()).is_err());
    }

    #[test]
    fn mixed_capability_rejected() {
        let s = sensing();
        let mut ds = TrajectoryDataset::new(&s);
        let mut rng = crate::rng::stream(3, "ds", 0);
        let mut steps = random_episode(&ds, 4, 2, &mut rng);
        steps[0].capability = Capability::Mixed;
        steps[1].capability = Capability::Mixed;
        assert!(ds.push_episode(4, steps, meta()).is_err());
    }
}
