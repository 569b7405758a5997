//! Fixed-capacity latent replay buffer.
//!
//! Dump layout (all integers u32, all floats f32, little-endian):
//!
//! ```text
//! magic "ECLB" | version = 1 | capacity | policy (0 balanced, 1 unbalanced) | k
//! latent rank | latent dims... | count
//! has_raw (0/1) | [raw rank | raw dims...]
//! latents  count * prod(latent dims)
//! labels   count
//! sources  count            (0xFFFF_FFFF marks pretraining patterns)
//! [raw     count * prod(raw dims)]
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binfmt::{check_magic, read_f32s, read_shape, read_u32, to_u32, write_f32s, write_shape, write_u32};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BUFFER_MAGIC: &[u8; 4] = b"ECLB";
pub const BUFFER_VERSION: u32 = 1;
/// Source id of patterns taken from the pretraining set.
pub const PRETRAIN_SOURCE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ReplacementPolicy {
    Balanced,
    Unbalanced { k: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentPattern {
    pub latent: Vec<f32>,
    pub label: usize,
    pub source: u32,
    /// Input frame, kept only when latents must be recomputed later.
    pub raw: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    latent_shape: Vec<usize>,
    raw_shape: Option<Vec<usize>>,
    policy: ReplacementPolicy,
    entries: Vec<LatentPattern>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, latent_shape: Vec<usize>, policy: ReplacementPolicy) -> Self {
        ReplayBuffer {
            capacity,
            latent_shape,
            raw_shape: None,
            policy,
            entries: Vec::new(),
        }
    }

    /// Enables raw-frame retention alongside latents.
    pub fn with_raw_frames(mut self, raw_shape: Vec<usize>) -> Self {
        self.raw_shape = Some(raw_shape);
        self
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn policy(&self) -> ReplacementPolicy {
        self.policy
    }

    pub fn latent_shape(&self) -> &[usize] {
        &self.latent_shape
    }

    pub fn raw_shape(&self) -> Option<&[usize]> {
        self.raw_shape.as_deref()
    }

    pub fn entries(&self) -> &[LatentPattern] {
        &self.entries
    }

    fn latent_len(&self) -> usize {
        self.latent_shape.iter().product()
    }

    /// Latent storage only: `len * latent elements * 4` bytes.
    pub fn byte_size(&self) -> usize {
        self.entries.len() * self.latent_len() * std::mem::size_of::<f32>()
    }

    pub fn class_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.label).or_insert(0) += 1;
        }
        counts
    }

    fn check_pattern(&self, p: &LatentPattern) -> Result<()> {
        if p.latent.len() != self.latent_len() {
            return Err(Error::dim("replay pattern", &self.latent_shape, &[p.latent.len()]));
        }
        if let Some(rs) = &self.raw_shape {
            let n: usize = rs.iter().product();
            match &p.raw {
                Some(r) if r.len() == n => {}
                _ => return Err(Error::Argument("buffer retains raw frames but pattern has none".into())),
            }
        }
        Ok(())
    }

    /// Fills the buffer with the same number of random patterns from every
    /// class present in `pool`.
    pub fn seed_from_pretrain<R: Rng + ?Sized>(&mut self, pool: &[LatentPattern], rng: &mut R) -> Result<()> {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, p) in pool.iter().enumerate() {
            self.check_pattern(p)?;
            by_class.entry(p.label).or_default().push(i);
        }
        let classes = by_class.len();
        if classes == 0 || !self.capacity.is_multiple_of(classes) {
            return Err(Error::Config(format!(
                "capacity {} is not divisible by {classes} initial classes",
                self.capacity
            )));
        }
        let per_class = self.capacity / classes;
        if let Some((c, idx)) = by_class.iter().find(|(_, v)| v.len() < per_class) {
            return Err(Error::Argument(format!(
                "class {c} has {} pretraining patterns, {per_class} needed",
                idx.len()
            )));
        }
        self.entries.clear();
        for idx in by_class.values() {
            for j in index::sample(rng, idx.len(), per_class) {
                self.entries.push(pool[idx[j]].clone());
            }
        }
        Ok(())
    }

    /// Inserts according to the configured policy. Returns the replacement
    /// count: evicted patterns for the balanced policy, incoming patterns
    /// written for the unbalanced one.
    pub fn insert<R: Rng + ?Sized>(&mut self, new: Vec<LatentPattern>, rng: &mut R) -> Result<usize> {
        match self.policy {
            ReplacementPolicy::Balanced => self.insert_balanced(new, rng),
            ReplacementPolicy::Unbalanced { k } => self.insert_unbalanced(new, k, rng),
        }
    }

    /// Class-balanced insertion by water-filling: each class is targeted at a
    /// common level `L` (some at `L + 1` to use the whole capacity), capped by
    /// how many patterns the class actually has. Over-target classes lose
    /// random patterns; under-target classes gain a random subset of the
    /// offered ones. Classes with fewer patterns than `L` keep all of them.
    pub fn insert_balanced<R: Rng + ?Sized>(&mut self, new: Vec<LatentPattern>, rng: &mut R) -> Result<usize> {
        if new.is_empty() {
            return Ok(0);
        }
        for p in &new {
            self.check_pattern(p)?;
        }
        let mut held: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            held.entry(e.label).or_default().push(i);
        }
        let mut offered: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, p) in new.iter().enumerate() {
            offered.entry(p.label).or_default().push(i);
        }
        let classes: Vec<usize> = held
            .keys()
            .chain(offered.keys())
            .copied()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let count = |c: &usize| held.get(c).map_or(0, Vec::len);
        let supply: Vec<(usize, usize, usize)> = classes
            .iter()
            .map(|c| (*c, count(c), count(c) + offered.get(c).map_or(0, Vec::len)))
            .collect();
        let targets = water_fill(&supply, self.capacity);

        let mut evict = vec![false; self.entries.len()];
        let mut incoming = Vec::new();
        let mut evicted = 0;
        for (&(c, have, _), &t) in supply.iter().zip(&targets) {
            if have > t {
                let idx = &held[&c];
                for j in index::sample(rng, idx.len(), have - t) {
                    evict[idx[j]] = true;
                }
                evicted += have - t;
            } else if t > have {
                let idx = &offered[&c];
                let mut pick: Vec<usize> = index::sample(rng, idx.len(), t - have).into_vec();
                pick.sort_unstable();
                incoming.extend(pick.into_iter().map(|j| idx[j]));
            }
        }
        let mut new: Vec<Option<LatentPattern>> = new.into_iter().map(Some).collect();
        let mut incoming = incoming.into_iter().map(|i| new[i].take().expect("picked once"));
        // reuse evicted slots in place, then append
        let mut kept = Vec::with_capacity(self.capacity);
        for (e, gone) in std::mem::take(&mut self.entries).into_iter().zip(evict) {
            if !gone {
                kept.push(e);
            } else if let Some(p) = incoming.next() {
                kept.push(p);
            }
        }
        kept.extend(incoming);
        self.entries = kept;
        debug_assert!(self.entries.len() <= self.capacity);
        Ok(evicted)
    }

    /// Writes a uniform random subset of `min(k, new.len(), capacity)`
    /// incoming patterns. Free capacity is used first; the rest overwrite
    /// uniformly chosen stored patterns.
    pub fn insert_unbalanced<R: Rng + ?Sized>(
        &mut self,
        new: Vec<LatentPattern>,
        k: usize,
        rng: &mut R,
    ) -> Result<usize> {
        for p in &new {
            self.check_pattern(p)?;
        }
        let m = k.min(new.len()).min(self.capacity);
        if m == 0 {
            return Ok(0);
        }
        let mut chosen: Vec<usize> = index::sample(rng, new.len(), m).into_vec();
        chosen.sort_unstable();
        let mut new: Vec<Option<LatentPattern>> = new.into_iter().map(Some).collect();
        let mut picked = chosen.into_iter().map(|i| new[i].take().expect("distinct"));
        let free = self.capacity.saturating_sub(self.entries.len()).min(m);
        self.entries.extend(picked.by_ref().take(free));
        let overwrite = m - free;
        if overwrite > 0 {
            let slots = index::sample(rng, self.entries.len() - free, overwrite);
            for (slot, p) in slots.into_iter().zip(picked) {
                self.entries[slot] = p;
            }
        }
        Ok(m)
    }

    /// Draws `min(n, len)` distinct patterns uniformly at random.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&LatentPattern> {
        let n = n.min(self.entries.len());
        index::sample(rng, self.entries.len(), n)
            .into_iter()
            .map(|i| &self.entries[i])
            .collect()
    }

    /// Stacks sampled latents into a `[n, latent...]` tensor plus labels.
    pub fn batch_of(&self, patterns: &[&LatentPattern]) -> (Tensor, Vec<usize>) {
        let items: Vec<&[f32]> = patterns.iter().map(|p| p.latent.as_slice()).collect();
        let t = Tensor::stack(&self.latent_shape, &items).expect("checked on insert");
        (t, patterns.iter().map(|p| p.label).collect())
    }

    /// Replaces every stored latent using `f(raw)`; requires raw frames.
    pub fn recompute_latents<F>(&mut self, latent_shape: Vec<usize>, f: F) -> Result<()>
    where
        F: Fn(&Tensor) -> Result<Tensor>,
    {
        let raw_shape = self
            .raw_shape
            .clone()
            .ok_or_else(|| Error::State("buffer does not retain raw frames".into()))?;
        if self.entries.is_empty() {
            self.latent_shape = latent_shape;
            return Ok(());
        }
        let items: Vec<&[f32]> = self
            .entries
            .iter()
            .map(|e| e.raw.as_deref().expect("raw kept"))
            .collect();
        let batch = Tensor::stack(&raw_shape, &items)?;
        let latents = f(&batch)?;
        if latents.item_shape() != latent_shape.as_slice() || latents.batch() != self.entries.len() {
            return Err(Error::dim("recompute_latents", &latent_shape, latents.item_shape()));
        }
        for (i, e) in self.entries.iter_mut().enumerate() {
            e.latent = latents.item(i).to_vec();
        }
        self.latent_shape = latent_shape;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(BUFFER_MAGIC)?;
        write_u32(w, BUFFER_VERSION)?;
        write_u32(w, to_u32(self.capacity, "capacity")?)?;
        let (tag, k) = match self.policy {
            ReplacementPolicy::Balanced => (0, 0),
            ReplacementPolicy::Unbalanced { k } => (1, k),
        };
        write_u32(w, tag)?;
        write_u32(w, to_u32(k, "k")?)?;
        write_shape(w, &self.latent_shape)?;
        write_u32(w, to_u32(self.entries.len(), "count")?)?;
        match &self.raw_shape {
            Some(rs) => {
                write_u32(w, 1)?;
                write_shape(w, rs)?;
            }
            None => write_u32(w, 0)?,
        }
        for e in &self.entries {
            write_f32s(w, &e.latent)?;
        }
        for e in &self.entries {
            write_u32(w, to_u32(e.label, "label")?)?;
        }
        for e in &self.entries {
            write_u32(w, e.source)?;
        }
        if self.raw_shape.is_some() {
            for e in &self.entries {
                write_f32s(w, e.raw.as_deref().expect("raw kept"))?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        check_magic(r, BUFFER_MAGIC, BUFFER_VERSION)?;
        let capacity = read_u32(r)? as usize;
        let policy = match (read_u32(r)?, read_u32(r)? as usize) {
            (0, _) => ReplacementPolicy::Balanced,
            (1, k) => ReplacementPolicy::Unbalanced { k },
            (t, _) => return Err(Error::Format(format!("unknown policy tag {t}"))),
        };
        let latent_shape = read_shape(r)?;
        let count = read_u32(r)? as usize;
        if count > capacity {
            return Err(Error::Format(format!("{count} entries exceed capacity {capacity}")));
        }
        let raw_shape = match read_u32(r)? {
            0 => None,
            1 => Some(read_shape(r)?),
            t => return Err(Error::Format(format!("bad raw flag {t}"))),
        };
        let ll: usize = latent_shape.iter().product();
        let latents = read_f32s(r, count * ll)?;
        let labels: Vec<u32> = (0..count).map(|_| read_u32(r)).collect::<Result<_>>()?;
        let sources: Vec<u32> = (0..count).map(|_| read_u32(r)).collect::<Result<_>>()?;
        let raws = match &raw_shape {
            Some(rs) => {
                let rl: usize = rs.iter().product();
                Some((rl, read_f32s(r, count * rl)?))
            }
            None => None,
        };
        let entries = (0..count)
            .map(|i| LatentPattern {
                latent: latents[i * ll..(i + 1) * ll].to_vec(),
                label: labels[i] as usize,
                source: sources[i],
                raw: raws.as_ref().map(|(rl, d)| d[i * rl..(i + 1) * rl].to_vec()),
            })
            .collect();
        Ok(ReplayBuffer {
            capacity,
            latent_shape,
            raw_shape,
            policy,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

/// Per-class targets for `(class, held, supply)` triples under `capacity`.
fn water_fill(supply: &[(usize, usize, usize)], capacity: usize) -> Vec<usize> {
    let total: usize = supply.iter().map(|s| s.2).sum();
    if total <= capacity {
        return supply.iter().map(|s| s.2).collect();
    }
    let fill = |level: usize| -> usize { supply.iter().map(|s| s.2.min(level)).sum() };
    // largest level whose fill fits
    let (mut lo, mut hi) = (0usize, supply.iter().map(|s| s.2).max().unwrap_or(0));
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if fill(mid) <= capacity {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let level = lo;
    let mut targets: Vec<usize> = supply.iter().map(|s| s.2.min(level)).collect();
    let mut spare = capacity - fill(level);
    // the extra slot goes to classes already holding the most patterns
    let mut eligible: Vec<usize> = (0..supply.len()).filter(|&i| supply[i].2 > level).collect();
    eligible.sort_by_key(|&i| (std::cmp::Reverse(supply[i].1), supply[i].0));
    for i in eligible {
        if spare == 0 {
            break;
        }
        targets[i] += 1;
        spare -= 1;
    }
    targets
}
