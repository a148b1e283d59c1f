//! In-process simulation of the multi-message shuffled pipeline.
//!
//! Client randomizers emit messages that are routed to one channel per
//! (level, block) pair: `s` channels for the binary mechanism and `m·s` for
//! the multi-level mechanisms. Each channel applies an independent uniform
//! permutation (Fisher–Yates) that strips client ordering before the
//! analyzer runs. The analyzer aggregates by exact counting, so the pipeline
//! output is bit-identical to feeding the analyzer directly, and the
//! transcript records the exact payload bits each client put on the wire.

use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::binary::{self, BinaryVector, Message, SamplingPlan};
use crate::error::{DmeError, Result};
use crate::l2::L2Config;
use crate::linf::{self, BudgetAllocation, LinfConfig};
use crate::rr::FlipProb;
use crate::seeding;
use crate::wire::{self, BitWriter};

/// Identifies one shuffler: level 0 is the standalone binary mechanism,
/// levels `1..=m` the bit levels of the multi-level mechanisms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChannelId {
    pub level: u8,
    pub block: u16,
}

/// One shuffler's view: an (optionally permuted) message multiset with no
/// client identifiers.
#[derive(Debug, Clone)]
pub struct Channel {
    pub id: ChannelId,
    pub plan: SamplingPlan,
    pub p: FlipProb,
    pub messages: Vec<Message>,
}

/// Uniformly permute a channel's messages in place (Fisher–Yates).
pub fn shuffle_channel<R: Rng + ?Sized>(messages: &mut [Message], rng: &mut R) {
    for i in (1..messages.len()).rev() {
        let j = rng.gen_range(0..=i);
        messages.swap(i, j);
    }
}

/// Which transport model the pipeline simulates. Both produce the same
/// estimate distribution; the shuffled transcript has no client ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportMode {
    /// Clients send directly to the server; channels keep arrival order and
    /// the transcript attaches client ids.
    Direct,
    /// Every channel is independently permuted before analysis.
    Shuffled,
}

/// The mechanism under simulation.
#[derive(Debug, Clone)]
pub enum Mechanism {
    Binary {
        plan: SamplingPlan,
        p: FlipProb,
    },
    Linf {
        cfg: LinfConfig,
        alloc: BudgetAllocation,
    },
    L2 {
        cfg: L2Config,
        alloc: BudgetAllocation,
    },
}

/// Client-side inputs for one pipeline run.
#[derive(Debug, Clone)]
pub enum ClientInputs {
    Bits(Vec<BinaryVector>),
    Reals(Vec<Vec<f64>>),
}

impl ClientInputs {
    pub fn len(&self) -> usize {
        match self {
            ClientInputs::Bits(v) => v.len(),
            ClientInputs::Reals(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Exact wire accounting for one run.
#[derive(Debug, Clone)]
pub struct Transcript {
    /// Measured payload bits per client (headers excluded).
    pub bits_per_client: Vec<u64>,
    /// Serialized size per client including the fixed 13-byte per-level
    /// headers and byte padding.
    pub bytes_per_client: Vec<u64>,
    /// Clipped-coordinate count per client (ℓ2 mechanism only, else zeros).
    pub clip_counts: Vec<usize>,
    /// Channels in (level, block) order, as the analyzer consumed them.
    pub channels: Vec<Channel>,
    /// Client id per message, parallel to each channel's messages; present
    /// only in direct transport.
    pub client_ids: Option<Vec<Vec<u32>>>,
    pub mode: TransportMode,
}

impl Transcript {
    /// Dump all channels into `<dir>/transcript.bin` in the packed wire
    /// format, with `<dir>/transcript.idx` mapping `level,block` to the byte
    /// offset and length of each channel section.
    ///
    /// Section layout: `u8 level | u16 block | u16 d | u16 s | f64 p |
    /// u32 count`, then `count` packed (coord-within-block, value-bit)
    /// records padded to a byte boundary.
    pub fn dump(&self, dir: &Path) -> Result<()> {
        let mut blob = Vec::new();
        let mut index = String::from("level,block,offset,length\n");
        for ch in &self.channels {
            let offset = blob.len();
            blob.push(ch.id.level);
            blob.extend_from_slice(&ch.id.block.to_le_bytes());
            blob.extend_from_slice(&(ch.plan.d as u16).to_le_bytes());
            blob.extend_from_slice(&(ch.plan.s as u16).to_le_bytes());
            blob.extend_from_slice(&ch.p.get().to_le_bytes());
            blob.extend_from_slice(&(ch.messages.len() as u32).to_le_bytes());
            let cbits = ch.plan.coord_bits();
            let block_start = ch.id.block as u32 * ch.plan.a as u32;
            let mut writer = BitWriter::new();
            for msg in &ch.messages {
                writer.write_bits((msg.coord - block_start) as u64, cbits);
                writer.write_bits(msg.value_bit as u64, 1);
            }
            blob.extend_from_slice(&writer.into_bytes());
            index.push_str(&format!(
                "{},{},{},{}\n",
                ch.id.level,
                ch.id.block,
                offset,
                blob.len() - offset
            ));
        }
        let write = |name: &str, data: &[u8]| -> std::io::Result<()> {
            let mut f = std::fs::File::create(dir.join(name))?;
            f.write_all(data)
        };
        write("transcript.bin", &blob)
            .and_then(|_| write("transcript.idx", index.as_bytes()))
            .map_err(|e| DmeError::Wire(format!("transcript dump failed: {e}")))
    }
}

/// Output of one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub estimate: Vec<f64>,
    pub transcript: Transcript,
}

// Substream domains under the master seed.
const DOMAIN_CLIENT: u64 = 0;
const DOMAIN_SHUFFLER: u64 = 1;

/// Run randomize → route → (shuffle) → analyze for `n` clients.
///
/// Client `i` draws from the substream `(master_seed, 0, i)` and channel
/// `(level, block)` shuffles with `(master_seed, 1, level, block)`, so runs
/// are reproducible under any execution order.
pub fn run_pipeline(
    inputs: &ClientInputs,
    mech: &Mechanism,
    mode: TransportMode,
    master_seed: u64,
) -> Result<PipelineOutput> {
    if inputs.is_empty() {
        return Err(DmeError::InvalidParameter("no client inputs".into()));
    }
    let n = inputs.len();

    let (plan, level_params): (SamplingPlan, Vec<FlipProb>) = match mech {
        Mechanism::Binary { plan, p } => (*plan, vec![*p]),
        Mechanism::Linf { cfg, alloc } => (cfg.plan(), alloc.p_k.clone()),
        Mechanism::L2 { cfg, alloc } => (cfg.inner.plan(), alloc.p_k.clone()),
    };
    let levels = level_params.len();
    let level_base: u8 = match mech {
        Mechanism::Binary { .. } => 0,
        _ => 1,
    };

    let mut channels: Vec<Channel> = Vec::with_capacity(levels * plan.s);
    for (k, &p_k) in level_params.iter().enumerate() {
        for block in 0..plan.s {
            channels.push(Channel {
                id: ChannelId {
                    level: level_base + k as u8,
                    block: block as u16,
                },
                plan,
                p: p_k,
                messages: Vec::with_capacity(n),
            });
        }
    }
    let mut client_ids: Vec<Vec<u32>> = vec![Vec::new(); channels.len()];

    let mut bits_per_client = Vec::with_capacity(n);
    let mut bytes_per_client = Vec::with_capacity(n);
    let mut clip_counts = vec![0usize; n];

    for i in 0..n {
        let mut rng = seeding::substream(master_seed, &[DOMAIN_CLIENT, i as u64]);
        // Per-level bundles for this client, plus the measured wire size.
        let per_level: Vec<binary::MessageBundle> = match (mech, inputs) {
            (Mechanism::Binary { plan, p }, ClientInputs::Bits(bits)) => {
                let bundle = binary::randomize(&bits[i], plan, *p, &mut rng)?;
                let (bytes, nbits) = wire::encode_bundle(&bundle, 0)?;
                bits_per_client.push(nbits);
                bytes_per_client.push(bytes.len() as u64);
                vec![bundle]
            }
            (Mechanism::Linf { cfg, alloc }, ClientInputs::Reals(xs)) => {
                let bundle = linf::randomize(&xs[i], cfg, alloc, &mut rng)?;
                let (bytes, nbits) = wire::encode_linf_bundle(&bundle)?;
                bits_per_client.push(nbits);
                bytes_per_client.push(bytes.len() as u64);
                bundle.per_level
            }
            (Mechanism::L2 { cfg, alloc }, ClientInputs::Reals(xs)) => {
                let (bundle, clips) = cfg.randomize(&xs[i], alloc, &mut rng)?;
                clip_counts[i] = clips;
                let (bytes, nbits) = wire::encode_linf_bundle(&bundle)?;
                bits_per_client.push(nbits);
                bytes_per_client.push(bytes.len() as u64);
                bundle.per_level
            }
            _ => {
                return Err(DmeError::InvalidParameter(
                    "input kind does not match the mechanism".into(),
                ))
            }
        };
        for (k, bundle) in per_level.iter().enumerate() {
            for (j, msg) in bundle.messages.iter().enumerate() {
                let idx = k * plan.s + j;
                channels[idx].messages.push(*msg);
                client_ids[idx].push(i as u32);
            }
        }
    }

    if mode == TransportMode::Shuffled {
        for ch in channels.iter_mut() {
            let mut rng = seeding::substream(
                master_seed,
                &[DOMAIN_SHUFFLER, ch.id.level as u64, ch.id.block as u64],
            );
            shuffle_channel(&mut ch.messages, &mut rng);
        }
    }

    // Analyzer consumes channels in fixed (level, block) order.
    let per_level_messages: Vec<Vec<Message>> = (0..levels)
        .map(|k| {
            (0..plan.s)
                .flat_map(|b| channels[k * plan.s + b].messages.iter().copied())
                .collect()
        })
        .collect();

    let estimate = match mech {
        Mechanism::Binary { plan, p } => {
            binary::analyze_messages(
                per_level_messages[0].iter().copied(),
                plan,
                *p,
                n,
            )?
            .values
        }
        Mechanism::Linf { cfg, alloc } => {
            linf::analyze_level_messages(&per_level_messages, cfg, alloc, n)?
        }
        Mechanism::L2 { cfg, alloc } => {
            cfg.analyze_level_messages(&per_level_messages, alloc, n)?
        }
    };

    Ok(PipelineOutput {
        estimate,
        transcript: Transcript {
            bits_per_client,
            bytes_per_client,
            clip_counts,
            channels,
            client_ids: match mode {
                TransportMode::Direct => Some(client_ids),
                TransportMode::Shuffled => None,
            },
            mode,
        },
    })
}
