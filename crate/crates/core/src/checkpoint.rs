//! Agent checkpoints as JSON documents.
//!
//! Every model real is stored as the hex string of its IEEE-754 bit pattern,
//! so a save/load round trip is bit-exact. Writes go to a temporary file in
//! the target directory and are renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentConfig, ExperienceBuffer, StepRecord};
use crate::distributions::GaussianParams;
use crate::error::{Result, TgmError};
use crate::planner::QTable;
use crate::structure::{ComponentLedger, ComponentStatus, LedgerEntry, Segment};
use crate::transition::{CountTier, TransitionTensor};
use crate::vgm::{ComponentParams, MixtureState, Tier};

pub const FORMAT_VERSION: u32 = 1;

/// A real encoded as 16 hex digits of its bit pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct HexF64(u64);

impl HexF64 {
    pub fn get(self) -> f64 {
        f64::from_bits(self.0)
    }
}

impl From<f64> for HexF64 {
    fn from(x: f64) -> Self {
        Self(x.to_bits())
    }
}

impl From<HexF64> for String {
    fn from(h: HexF64) -> String {
        format!("{:016x}", h.0)
    }
}

impl TryFrom<String> for HexF64 {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        if s.len() != 16 {
            return Err(format!("hex real must have 16 digits, got {s:?}"));
        }
        u64::from_str_radix(&s, 16).map(Self).map_err(|e| format!("bad hex real {s:?}: {e}"))
    }
}

fn enc(xs: &[f64]) -> Vec<HexF64> {
    xs.iter().map(|&x| x.into()).collect()
}

fn dec(xs: &[HexF64]) -> Vec<f64> {
    xs.iter().map(|h| h.get()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDoc {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub data: Vec<HexF64>,
}

impl MatrixDoc {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)].into())).collect();
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }

    fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(TgmError::Checkpoint(format!(
                "matrix {}x{} has {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &dec(&self.data)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDoc {
    pub m: Vec<HexF64>,
    pub beta: HexF64,
    pub w: MatrixDoc,
    pub v: HexF64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierDoc {
    pub d: Vec<HexF64>,
    pub components: Vec<ComponentDoc>,
}

impl TierDoc {
    fn from_tier(t: &Tier) -> Self {
        Self {
            d: enc(&t.d),
            components: t
                .components
                .iter()
                .map(|c| ComponentDoc {
                    m: enc(c.m.as_slice()),
                    beta: c.beta.into(),
                    w: MatrixDoc::from_matrix(&c.w),
                    v: c.v.into(),
                })
                .collect(),
        }
    }

    fn to_tier(&self) -> Result<Tier> {
        let components = self
            .components
            .iter()
            .map(|c| {
                Ok(ComponentParams {
                    m: DVector::from_vec(dec(&c.m)),
                    beta: c.beta.get(),
                    w: c.w.to_matrix()?,
                    v: c.v.get(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Tier { d: dec(&self.d), components })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDoc {
    pub mean: Vec<HexF64>,
    pub precision: MatrixDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntryDoc {
    pub persistence: u32,
    pub status: ComponentStatus,
    pub snapshot: Option<SnapshotDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionDoc {
    pub num_actions: usize,
    pub num_states: usize,
    /// Raw `[action][to][from]` counts.
    pub prior: Vec<HexF64>,
    pub empirical: Vec<HexF64>,
    pub posterior: Vec<HexF64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QDoc {
    pub alpha: HexF64,
    pub gamma: HexF64,
    /// Actions × components.
    pub values: MatrixDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDoc {
    pub action: usize,
    pub reward: HexF64,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDoc {
    pub start: usize,
    pub len: usize,
    pub open: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferDoc {
    pub observations: Vec<Vec<HexF64>>,
    pub steps: Vec<Option<StepDoc>>,
    pub segments: Vec<SegmentDoc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngDoc {
    /// 32-byte ChaCha key, hex.
    pub seed: String,
    pub stream: u64,
    /// Position in the keystream, decimal (exceeds 64 bits).
    pub word_pos: String,
}

impl RngDoc {
    fn from_rng(rng: &ChaCha8Rng) -> Self {
        let seed = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        Self { seed, stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    fn to_rng(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = |what: &str| TgmError::Checkpoint(format!("bad rng {what}"));
        if self.seed.len() != 64 || !self.seed.is_ascii() {
            return Err(bad("seed"));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad("seed"))?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad("word_pos"))?);
        Ok(rng)
    }
}

/// The full checkpoint document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub config: AgentConfig,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "O")]
    pub o: usize,
    pub episodes_done: usize,
    pub total_steps: u64,
    pub last_vfe: HexF64,
    pub prior: TierDoc,
    pub empirical: TierDoc,
    pub posterior: TierDoc,
    pub responsibilities: MatrixDoc,
    pub transitions: TransitionDoc,
    pub ledger: Vec<LedgerEntryDoc>,
    pub q: QDoc,
    pub buffer: BufferDoc,
    pub rng: RngDoc,
}

impl Checkpoint {
    pub fn from_agent(agent: &Agent, config_hash: &str) -> Self {
        let s = &agent.state;
        let t = &agent.tensor;
        Self {
            format_version: FORMAT_VERSION,
            config_hash: config_hash.to_string(),
            config: agent.cfg.clone(),
            k: s.num_components(),
            o: s.dim,
            episodes_done: agent.episodes_done,
            total_steps: agent.total_steps,
            last_vfe: agent.last_vfe.into(),
            prior: TierDoc::from_tier(&s.prior),
            empirical: TierDoc::from_tier(&s.empirical),
            posterior: TierDoc::from_tier(&s.posterior),
            responsibilities: MatrixDoc::from_matrix(&s.responsibilities),
            transitions: TransitionDoc {
                num_actions: t.num_actions(),
                num_states: t.num_states(),
                prior: enc(t.raw(CountTier::Prior)),
                empirical: enc(t.raw(CountTier::Empirical)),
                posterior: enc(t.raw(CountTier::Posterior)),
            },
            ledger: agent
                .ledger
                .entries
                .iter()
                .map(|e| LedgerEntryDoc {
                    persistence: e.persistence,
                    status: e.status,
                    snapshot: e.snapshot.as_ref().map(|g| SnapshotDoc {
                        mean: enc(g.mean().as_slice()),
                        precision: MatrixDoc::from_matrix(g.precision()),
                    }),
                })
                .collect(),
            q: QDoc {
                alpha: agent.q.alpha.into(),
                gamma: agent.q.gamma.into(),
                values: MatrixDoc::from_matrix(&agent.q.values),
            },
            buffer: BufferDoc {
                observations: agent.buffer.observations.iter().map(|o| enc(o.as_slice())).collect(),
                steps: agent
                    .buffer
                    .steps
                    .iter()
                    .map(|s| s.map(|r| StepDoc { action: r.action, reward: r.reward.into(), terminal: r.terminal }))
                    .collect(),
                segments: agent
                    .buffer
                    .segments
                    .iter()
                    .map(|s| SegmentDoc { start: s.start, len: s.len, open: s.open })
                    .collect(),
            },
            rng: RngDoc::from_rng(&agent.rng),
        }
    }

    /// Rebuild the agent, validating every part.
    pub fn to_agent(&self) -> Result<Agent> {
        if self.format_version != FORMAT_VERSION {
            return Err(TgmError::Checkpoint(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let corrupt = |e: TgmError| TgmError::Checkpoint(e.to_string());
        let state = MixtureState {
            dim: self.o,
            prior: self.prior.to_tier()?,
            empirical: self.empirical.to_tier()?,
            posterior: self.posterior.to_tier()?,
            responsibilities: self.responsibilities.to_matrix()?,
        };
        if state.num_components() != self.k {
            return Err(TgmError::Checkpoint(format!("K = {} but tiers hold {}", self.k, state.num_components())));
        }
        let t = &self.transitions;
        let tensor = TransitionTensor::from_parts(t.num_actions, t.num_states, dec(&t.prior), dec(&t.empirical), dec(&t.posterior))
            .map_err(corrupt)?;
        let mut q = QTable::new(0, 0, self.q.alpha.get(), self.q.gamma.get()).map_err(corrupt)?;
        q.values = self.q.values.to_matrix()?;
        let entries = self
            .ledger
            .iter()
            .map(|e| {
                let snapshot = match &e.snapshot {
                    None => None,
                    Some(s) => Some(
                        GaussianParams::new(DVector::from_vec(dec(&s.mean)), s.precision.to_matrix()?).map_err(corrupt)?,
                    ),
                };
                Ok(LedgerEntry { persistence: e.persistence, status: e.status, snapshot })
            })
            .collect::<Result<Vec<_>>>()?;

        let b = &self.buffer;
        let buffer = ExperienceBuffer {
            observations: b.observations.iter().map(|o| DVector::from_vec(dec(o))).collect(),
            steps: b
                .steps
                .iter()
                .map(|s| s.as_ref().map(|r| StepRecord { action: r.action, reward: r.reward.get(), terminal: r.terminal }))
                .collect(),
            segments: b.segments.iter().map(|s| Segment { start: s.start, len: s.len, open: s.open }).collect(),
        };
        check_buffer(&buffer, &state)?;

        self.config.validate().map_err(corrupt)?;
        let mut agent = Agent::from_parts(
            self.config.clone(),
            state,
            tensor,
            q,
            ComponentLedger { entries },
            self.total_steps,
            self.last_vfe.get(),
            self.rng.to_rng()?,
        )
        .map_err(corrupt)?;
        agent.buffer = buffer;
        agent.episodes_done = self.episodes_done;
        Ok(agent)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| TgmError::Checkpoint(e.to_string()))
    }

    /// Atomic write: temp file in the same directory, then rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let name = path.file_name().ok_or_else(|| TgmError::Checkpoint(format!("not a file path: {}", path.display())))?;
        let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(self.to_json()?.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

fn check_buffer(buffer: &ExperienceBuffer, state: &MixtureState) -> Result<()> {
    let bad = |msg: String| Err(TgmError::Checkpoint(msg));
    let n = buffer.len();
    if buffer.steps.len() != n {
        return bad(format!("{} step records for {n} observations", buffer.steps.len()));
    }
    // Rows cover the observations present at the last model update; later ones are appended after them.
    if state.responsibilities.nrows() > n {
        return bad(format!("{} responsibility rows for {n} observations", state.responsibilities.nrows()));
    }
    if buffer.observations.iter().any(|o| o.len() != state.dim) {
        return bad("observation dimension differs from O".into());
    }
    let mut next = 0;
    for s in &buffer.segments {
        if s.start != next || s.len == 0 {
            return bad("segments do not tile the buffer".into());
        }
        next += s.len;
    }
    if next != n {
        return bad("segments do not tile the buffer".into());
    }
    Ok(())
}
