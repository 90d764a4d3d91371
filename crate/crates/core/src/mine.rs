//! Frequent code-pattern mining and minimal non-overlapping covers.
//!
//! Mining is level-wise over pattern lengths 2..=p_max. At each level the
//! candidate variants are the distinct non-constant windows that occur in the
//! corpus; each variant's occurrence count is the number of (overlapping)
//! windows within Hamming distance `h(L)` of it, over every sequence.
//! Variants are grouped into Hamming-`h(L)` equivalence classes around the
//! most frequent exact variant, class supports are summed member counts, and
//! classes with support at least `o(L)` become patterns. Both thresholds are
//! linear in the pattern length: `o` decreases from `o_max` to `o_min`, `h`
//! increases from `h_min` to `h_max`.
//!
//! Maximal runs of one identical code (length >= 2) are continuations of the
//! same action and are registered as patterns unconditionally, without the
//! length cap; they match exactly during covering.
//!
//! The cover step tiles each code sequence with mined patterns (singleton
//! fallback) using the fewest pieces, via suffix DP.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use crate::pose::atomic_write;
use crate::segment::SegmentMap;

#[derive(Debug, Clone)]
pub struct MinerConfig {
    /// Maximum mined pattern length.
    pub p_max: usize,
    /// Occurrence threshold at length 2.
    pub o_max: u32,
    /// Occurrence threshold at length p_max.
    pub o_min: u32,
    /// Hamming tolerance at length 2.
    pub h_min: usize,
    /// Hamming tolerance at length p_max.
    pub h_max: usize,
    /// Code alphabet size.
    pub alphabet: usize,
}

impl Default for MinerConfig {
    fn default() -> Self {
        MinerConfig { p_max: 20, o_max: 15, o_min: 5, h_min: 0, h_max: 4, alphabet: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MineError {
    LengthOutOfRange { len: usize, p_max: usize },
    EmptyCorpus,
    RangeMismatch { expected: usize, got: usize },
}

impl fmt::Display for MineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MineError::LengthOutOfRange { len, p_max } => {
                write!(f, "pattern length {len} outside [2, {p_max}]")
            }
            MineError::EmptyCorpus => write!(f, "cannot mine an empty corpus"),
            MineError::RangeMismatch { expected, got } => {
                write!(f, "cover spans {got} atoms, segment map has {expected}")
            }
        }
    }
}

impl std::error::Error for MineError {}

/// A mined pattern: the canonical code string, its summed support, and the
/// exact variants merged into it. Runs carry their own occurrence count and
/// match exactly during covering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub id: usize,
    pub canonical: Vec<u16>,
    pub support: u64,
    pub variants: Vec<Vec<u16>>,
    pub is_run: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PatternSet {
    pub patterns: Vec<Pattern>,
}

/// One piece of a cover: a mined pattern or the singleton fallback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Piece {
    Pattern(usize),
    Singleton,
}

/// A minimal tiling of an atom-code sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cover {
    /// `(start_atom, length, piece)` in sequence order.
    pub assignments: Vec<(usize, usize, Piece)>,
    pub cover_size: usize,
}

/// Occurrence and Hamming thresholds for a pattern length, linearly
/// interpolated between the anchors at `L = 2` and `L = p_max`.
pub fn threshold_schedule(len: usize, cfg: &MinerConfig) -> Result<(u32, usize), MineError> {
    if len < 2 || len > cfg.p_max {
        return Err(MineError::LengthOutOfRange { len, p_max: cfg.p_max });
    }
    if cfg.p_max == 2 {
        return Ok((cfg.o_max, cfg.h_min));
    }
    let frac = (len - 2) as f64 / (cfg.p_max - 2) as f64;
    let o = (cfg.o_max as f64 + (cfg.o_min as f64 - cfg.o_max as f64) * frac).round() as u32;
    let h = (cfg.h_min as f64 + (cfg.h_max as f64 - cfg.h_min as f64) * frac).round() as usize;
    Ok((o, h))
}

pub fn hamming(a: &[u16], b: &[u16]) -> usize {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

fn hamming_within(a: &[u16], b: &[u16], h: usize) -> bool {
    let mut d = 0;
    for (x, y) in a.iter().zip(b) {
        if x != y {
            d += 1;
            if d > h {
                return false;
            }
        }
    }
    true
}

fn is_constant(s: &[u16]) -> bool {
    s.windows(2).all(|w| w[0] == w[1])
}

/// Number of corpus windows (overlapping, every sequence) within Hamming
/// distance `h` of `pattern`.
pub fn count_occurrences(corpus: &[Vec<u16>], pattern: &[u16], h: usize) -> u64 {
    let len = pattern.len();
    let mut count = 0u64;
    for seq in corpus {
        if seq.len() < len {
            continue;
        }
        for i in 0..=seq.len() - len {
            if hamming_within(&seq[i..i + len], pattern, h) {
                count += 1;
            }
        }
    }
    count
}

/// Groups candidate variants (with their counts) into Hamming-`h` equivalence
/// classes. The most frequent exact variant seeds each class as its canonical
/// (count ties break lexicographically); unassigned variants within `h` of
/// the canonical join it and supports are summed.
pub fn group_into_classes(
    counted: &[(Vec<u16>, u64)],
    h: usize,
) -> Vec<(Vec<u16>, u64, Vec<Vec<u16>>)> {
    let mut order: Vec<usize> = (0..counted.len()).collect();
    order.sort_by(|&a, &b| {
        counted[b].1.cmp(&counted[a].1).then_with(|| counted[a].0.cmp(&counted[b].0))
    });
    let mut assigned = vec![false; counted.len()];
    let mut classes = Vec::new();
    for &seed in &order {
        if assigned[seed] {
            continue;
        }
        assigned[seed] = true;
        let canonical = counted[seed].0.clone();
        let mut support = counted[seed].1;
        let mut variants = vec![canonical.clone()];
        for &other in &order {
            if assigned[other] {
                continue;
            }
            if hamming_within(&counted[other].0, &canonical, h) {
                assigned[other] = true;
                support += counted[other].1;
                variants.push(counted[other].0.clone());
            }
        }
        variants.sort();
        classes.push((canonical, support, variants));
    }
    classes
}

/// Maximal identical-code runs of length >= 2: map of (code, run length) →
/// occurrence count.
fn collect_runs(corpus: &[Vec<u16>]) -> BTreeMap<(u16, usize), u64> {
    let mut runs = BTreeMap::new();
    for seq in corpus {
        let mut i = 0;
        while i < seq.len() {
            let mut j = i + 1;
            while j < seq.len() && seq[j] == seq[i] {
                j += 1;
            }
            if j - i >= 2 {
                *runs.entry((seq[i], j - i)).or_insert(0u64) += 1;
            }
            i = j;
        }
    }
    runs
}

/// Level-wise mining over lengths 2..=p_max plus the identical-code-run rule.
/// Deterministic: pattern ids are assigned in (length, canonical) order with
/// run patterns after mined ones.
pub fn mine_patterns(corpus: &[Vec<u16>], cfg: &MinerConfig) -> Result<PatternSet, MineError> {
    if corpus.is_empty() {
        return Err(MineError::EmptyCorpus);
    }
    let mut mined: Vec<(Vec<u16>, u64, Vec<Vec<u16>>)> = Vec::new();

    for len in 2..=cfg.p_max {
        let (o, h) = threshold_schedule(len, cfg)?;
        // Candidate variants: distinct non-constant windows of this length.
        let mut windows: BTreeMap<Vec<u16>, u64> = BTreeMap::new();
        for seq in corpus {
            if seq.len() < len {
                continue;
            }
            for i in 0..=seq.len() - len {
                let w = &seq[i..i + len];
                if !is_constant(w) {
                    *windows.entry(w.to_vec()).or_insert(0) += 1;
                }
            }
        }
        if windows.is_empty() {
            continue;
        }
        let counted: Vec<(Vec<u16>, u64)> = if h == 0 {
            // Exact counting: the window tally is already the count.
            windows.into_iter().collect()
        } else {
            windows
                .into_keys()
                .map(|w| {
                    let c = count_occurrences(corpus, &w, h);
                    (w, c)
                })
                .collect()
        };
        for (canonical, support, variants) in group_into_classes(&counted, h) {
            if support >= o as u64 {
                mined.push((canonical, support, variants));
            }
        }
    }

    mined.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(&b.0)));

    let mut patterns = Vec::new();
    for (canonical, support, variants) in mined {
        patterns.push(Pattern { id: patterns.len(), canonical, support, variants, is_run: false });
    }
    let mined_canonicals: std::collections::BTreeSet<Vec<u16>> =
        patterns.iter().map(|p| p.canonical.clone()).collect();
    for ((code, len), count) in collect_runs(corpus) {
        let canonical = vec![code; len];
        if mined_canonicals.contains(&canonical) {
            continue;
        }
        patterns.push(Pattern {
            id: patterns.len(),
            canonical: canonical.clone(),
            support: count,
            variants: vec![canonical],
            is_run: true,
        });
    }
    Ok(PatternSet { patterns })
}

/// Whether `window` is covered by `pattern` under the miner config: mined
/// patterns tolerate Hamming `h(L)`, runs require an exact match.
pub fn pattern_matches(pattern: &Pattern, window: &[u16], cfg: &MinerConfig) -> bool {
    if pattern.canonical.len() != window.len() {
        return false;
    }
    if pattern.is_run {
        return pattern.canonical == window;
    }
    let (_, h) = threshold_schedule(pattern.canonical.len(), cfg).unwrap_or((0, 0));
    hamming_within(&pattern.canonical, window, h)
}

/// Minimal-piece tiling by suffix DP. `f(i)` is the fewest pieces covering
/// the suffix at atom `i`; transitions are every matching pattern plus the
/// singleton fallback. Ties prefer the longest piece, then the lowest
/// pattern id.
pub fn minimal_cover(seq: &[u16], patterns: &PatternSet, cfg: &MinerConfig) -> Cover {
    let n = seq.len();
    if n == 0 {
        return Cover { assignments: Vec::new(), cover_size: 0 };
    }
    const SINGLETON_ID: usize = usize::MAX;
    // f[i] = (pieces, chosen_len, chosen_id)
    let mut f = vec![(usize::MAX, 0usize, SINGLETON_ID); n + 1];
    f[n] = (0, 0, SINGLETON_ID);
    for i in (0..n).rev() {
        // Singleton fallback.
        let mut best = (f[i + 1].0 + 1, 1usize, SINGLETON_ID);
        for p in &patterns.patterns {
            let len = p.canonical.len();
            if i + len > n {
                continue;
            }
            if !pattern_matches(p, &seq[i..i + len], cfg) {
                continue;
            }
            let cand = (f[i + len].0 + 1, len, p.id);
            if cand.0 < best.0
                || (cand.0 == best.0
                    && (cand.1 > best.1 || (cand.1 == best.1 && cand.2 < best.2)))
            {
                best = cand;
            }
        }
        f[i] = best;
    }
    let mut assignments = Vec::new();
    let mut i = 0;
    while i < n {
        let (_, len, id) = f[i];
        let piece = if id == SINGLETON_ID { Piece::Singleton } else { Piece::Pattern(id) };
        assignments.push((i, len, piece));
        i += len;
    }
    Cover { assignments, cover_size: f[0].0 }
}

/// Lifts a cover over atoms to a frame-level segment map: a piece spanning
/// atoms `[a, a+len)` becomes the frame span of those atoms.
pub fn motif_segment_map(cover: &Cover, atom_map: &SegmentMap) -> Result<SegmentMap, MineError> {
    let total: usize = cover.assignments.iter().map(|(_, len, _)| len).sum();
    if total != atom_map.count() {
        return Err(MineError::RangeMismatch { expected: atom_map.count(), got: total });
    }
    let mut starts = Vec::with_capacity(cover.assignments.len());
    for &(a, _len, _) in &cover.assignments {
        starts.push(atom_map.segments[a].0);
    }
    Ok(SegmentMap::from_boundaries(&starts, atom_map.len))
}

/// Writes patterns as text: one per line, `id support c1 c2 ... cL`.
pub fn write_patterns(set: &PatternSet, path: &Path) -> io::Result<()> {
    let mut out = String::new();
    for p in &set.patterns {
        out.push_str(&format!("{} {}", p.id, p.support));
        for c in &p.canonical {
            out.push_str(&format!(" {c}"));
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Reads a pattern file written by [`write_patterns`]. Variants are not
/// stored on disk; each pattern reloads with its canonical as sole variant,
/// and single-code-run canonicals are marked as runs.
pub fn read_patterns(path: &Path) -> io::Result<PatternSet> {
    let text = fs::read_to_string(path)?;
    let mut patterns = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let id: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad_data)?;
        let support: u64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad_data)?;
        let canonical: Vec<u16> =
            it.map(|s| s.parse().map_err(|_| bad_data())).collect::<Result<_, _>>()?;
        if canonical.len() < 2 {
            return Err(bad_data());
        }
        let is_run = is_constant(&canonical);
        patterns.push(Pattern { id, canonical: canonical.clone(), support, variants: vec![canonical], is_run });
    }
    Ok(PatternSet { patterns })
}

/// Writes a cover as text: one piece per line, `start length pattern_id|S`.
pub fn write_cover(cover: &Cover, path: &Path) -> io::Result<()> {
    let mut out = String::new();
    for &(start, len, piece) in &cover.assignments {
        match piece {
            Piece::Pattern(id) => out.push_str(&format!("{start} {len} {id}\n")),
            Piece::Singleton => out.push_str(&format!("{start} {len} S\n")),
        }
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_cover(path: &Path) -> io::Result<Cover> {
    let text = fs::read_to_string(path)?;
    let mut assignments = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(bad_data());
        }
        let start: usize = parts[0].parse().map_err(|_| bad_data())?;
        let len: usize = parts[1].parse().map_err(|_| bad_data())?;
        let piece = if parts[2] == "S" {
            Piece::Singleton
        } else {
            Piece::Pattern(parts[2].parse().map_err(|_| bad_data())?)
        };
        assignments.push((start, len, piece));
    }
    let cover_size = assignments.len();
    Ok(Cover { assignments, cover_size })
}

fn bad_data() -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, "malformed pattern/cover file")
}
