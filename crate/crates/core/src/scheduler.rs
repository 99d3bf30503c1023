//! Per-worker stream schedules.
//!
//! Real items are split into chunks of `stream_length`. Every chunk is shown
//! to `redundancy` workers, each in an independent uniformly random order,
//! with gold items added on top of the chunk.
//!
//! Shuffles use ChaCha8 seeded with [`derive_seed`]`(rng_seed, chunk, replica)`,
//! which mixes the three values through SplitMix64. A schedule therefore only
//! depends on the task seed and its own coordinates.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Item, ItemId, TaskConfig, TaskKind};

/// Countdown lasts at least this long.
pub const MIN_COUNTDOWN_MS: u32 = 2000;

/// A trailing chunk shorter than this is merged into the previous one.
pub const MIN_TAIL_CHUNK: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub item_id: ItemId,
    pub onset_ms: f64,
    /// Known label for gold slots, `None` for real items.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<bool>,
}

impl Slot {
    pub fn is_gold(&self) -> bool {
        self.gold.is_some()
    }

    pub fn is_gold_positive(&self) -> bool {
        self.gold == Some(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSchedule {
    pub chunk: usize,
    pub replica: usize,
    pub slots: Vec<Slot>,
    pub countdown_frames: u32,
    pub display_interval_ms: u32,
    pub rng_seed_used: u64,
}

impl StreamSchedule {
    /// End of the last slot's display window.
    pub fn duration_ms(&self) -> f64 {
        self.slots.len() as f64 * self.display_interval_ms as f64
    }

    pub fn real_items(&self) -> impl Iterator<Item = &ItemId> {
        self.slots
            .iter()
            .filter(|s| !s.is_gold())
            .map(|s| &s.item_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountdownFrame {
    pub label: u32,
    pub onset_ms: f64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one (chunk, replica) coordinate of a task.
pub fn derive_seed(seed: u64, chunk: usize, replica: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ chunk as u64) ^ replica as u64)
}

pub fn countdown_frame_count(display_interval_ms: u32) -> u32 {
    MIN_COUNTDOWN_MS.div_ceil(display_interval_ms.max(1))
}

/// Countdown frames labelled N..0, one per display interval.
pub fn countdown_plan(config: &TaskConfig) -> Vec<CountdownFrame> {
    let delta = config.display_interval_ms;
    let n = countdown_frame_count(delta);
    (0..n)
        .map(|k| CountdownFrame {
            label: n - 1 - k,
            onset_ms: k as f64 * delta as f64,
        })
        .collect()
}

/// Splits `n` items into `[start, end)` ranges of `stream_length`, folding a
/// short tail into the previous range.
pub fn chunk_ranges(n: usize, stream_length: usize) -> Vec<(usize, usize)> {
    let len = stream_length.max(1);
    let mut ranges: Vec<(usize, usize)> = (0..n)
        .step_by(len)
        .map(|start| (start, (start + len).min(n)))
        .collect();
    if ranges.len() > 1 {
        let (start, end) = *ranges.last().unwrap();
        if end - start < MIN_TAIL_CHUNK.min(len) {
            ranges.pop();
            ranges.last_mut().unwrap().1 = end;
        }
    }
    ranges
}

/// Items that make up the streamed part of the task, and the gold pool.
fn partition<'a>(items: &'a [Item], config: &TaskConfig) -> (Vec<&'a Item>, Vec<&'a Item>) {
    match config.kind {
        TaskKind::Labeling => {
            let (gold, real) = items.iter().partition(|i| i.is_gold());
            (real, gold)
        }
        TaskKind::Qualification => (items.iter().filter(|i| i.is_gold()).collect(), Vec::new()),
    }
}

/// Number of gold slots added to a chunk of `chunk_len` real items.
pub fn gold_count(config: &TaskConfig, chunk_len: usize, pool_len: usize) -> usize {
    if config.kind == TaskKind::Qualification || config.gold_fraction <= 0.0 {
        return 0;
    }
    let wanted = (config.gold_fraction * chunk_len as f64).ceil() as usize;
    wanted.min(pool_len)
}

pub fn chunk_count(items: &[Item], config: &TaskConfig) -> usize {
    let (real, _) = partition(items, config);
    chunk_ranges(real.len(), config.stream_length).len()
}

/// Builds a single schedule for `(chunk, replica)`.
///
/// Replicas beyond `redundancy` are allowed; the service uses them for
/// qualification streams that are issued once per worker.
pub fn build_stream(
    items: &[Item],
    config: &TaskConfig,
    chunk: usize,
    replica: usize,
) -> Result<StreamSchedule> {
    let (real, gold) = partition(items, config);
    let ranges = chunk_ranges(real.len(), config.stream_length);
    let &(start, end) = ranges
        .get(chunk)
        .ok_or_else(|| Error::InvalidConfig(format!("chunk {chunk} out of range")))?;
    if config.kind == TaskKind::Labeling && config.gold_fraction > 0.0 && gold.is_empty() {
        return Err(Error::EmptyGoldPool(config.gold_fraction));
    }
    Ok(shuffle_chunk(
        &real[start..end],
        &gold,
        config,
        chunk,
        replica,
    ))
}

fn shuffle_chunk(
    chunk_items: &[&Item],
    gold: &[&Item],
    config: &TaskConfig,
    chunk: usize,
    replica: usize,
) -> StreamSchedule {
    let seed = derive_seed(config.rng_seed, chunk, replica);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_gold = gold_count(config, chunk_items.len(), gold.len());

    let mut entries: Vec<(ItemId, Option<bool>)> = chunk_items
        .iter()
        .map(|i| (i.item_id.clone(), i.gold_label))
        .collect();
    entries.extend(
        gold.choose_multiple(&mut rng, n_gold)
            .map(|g| (g.item_id.clone(), g.gold_label)),
    );
    entries.shuffle(&mut rng);

    let delta = config.display_interval_ms as f64;
    let slots = entries
        .into_iter()
        .enumerate()
        .map(|(j, (item_id, gold))| Slot {
            item_id,
            onset_ms: j as f64 * delta,
            gold,
        })
        .collect();

    StreamSchedule {
        chunk,
        replica,
        slots,
        countdown_frames: countdown_frame_count(config.display_interval_ms),
        display_interval_ms: config.display_interval_ms,
        rng_seed_used: seed,
    }
}

/// All schedules of a task, ordered by chunk then replica.
pub fn build_streams(items: &[Item], config: &TaskConfig) -> Result<Vec<StreamSchedule>> {
    if items.is_empty() {
        return Err(Error::NoItems);
    }
    let (real, gold) = partition(items, config);
    if config.kind == TaskKind::Labeling && config.gold_fraction > 0.0 && gold.is_empty() {
        return Err(Error::EmptyGoldPool(config.gold_fraction));
    }
    let ranges = chunk_ranges(real.len(), config.stream_length);
    let redundancy = config.redundancy as usize;
    let coords: Vec<(usize, usize)> = (0..ranges.len())
        .flat_map(|c| (0..redundancy).map(move |r| (c, r)))
        .collect();
    Ok(coords
        .par_iter()
        .map(|&(c, r)| {
            let (start, end) = ranges[c];
            shuffle_chunk(&real[start..end], &gold, config, c, r)
        })
        .collect())
}
