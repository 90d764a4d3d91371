//! Level-wise mining against full string-space enumeration, and the cover DP
//! against exhaustive segmentation search.

use motif_core::mine::{mine_patterns, minimal_cover, MinerConfig, Pattern, PatternSet};
use motif_oracles::harness::{random_corpus, Lcg};
use motif_oracles::{brute_force_frequent, exhaustive_cover};

fn assert_sets_equal(a: &PatternSet, b: &PatternSet, ctx: &str) {
    assert_eq!(a.patterns.len(), b.patterns.len(), "{ctx}: pattern counts differ");
    for (x, y) in a.patterns.iter().zip(&b.patterns) {
        assert_eq!(x.id, y.id, "{ctx}");
        assert_eq!(x.canonical, y.canonical, "{ctx}");
        assert_eq!(x.support, y.support, "{ctx}: support of {:?}", x.canonical);
        assert_eq!(x.variants, y.variants, "{ctx}: variants of {:?}", x.canonical);
        assert_eq!(x.is_run, y.is_run, "{ctx}");
    }
}

fn random_cfg(rng: &mut Lcg, alphabet: usize) -> MinerConfig {
    let o_max = rng.range(2, 6) as u32;
    let o_min = rng.range(1, o_max as usize + 1) as u32;
    let h_max = rng.range(0, 3);
    MinerConfig { p_max: 4, o_max, o_min, h_min: 0, h_max, alphabet }
}

#[test]
fn mining_matches_brute_force_on_random_corpora() {
    let mut rng = Lcg::new(0x51);
    for case in 0..100 {
        let alphabet = rng.range(2, 7);
        let n_seqs = rng.range(1, 5);
        let corpus = random_corpus(&mut rng, n_seqs, 25, alphabet);
        let cfg = random_cfg(&mut rng, alphabet);
        let mined = mine_patterns(&corpus, &cfg).unwrap();
        let brute = brute_force_frequent(&corpus, &cfg);
        assert_sets_equal(&mined, &brute, &format!("case {case} cfg {cfg:?}"));
    }
}

#[test]
fn cover_dp_matches_exhaustive_search() {
    let mut rng = Lcg::new(0x52);
    let mut checked = 0;
    while checked < 200 {
        let alphabet = rng.range(2, 6);
        let n_seqs = rng.range(1, 4);
        let corpus = random_corpus(&mut rng, n_seqs, 20, alphabet);
        let cfg = random_cfg(&mut rng, alphabet);
        let mined = mine_patterns(&corpus, &cfg).unwrap();
        // Keep instances small enough for the exponential oracle.
        let usable: Vec<Pattern> =
            mined.patterns.iter().take(5).cloned().collect();
        let set = PatternSet { patterns: usable };
        let len = rng.range(1, 16);
        let seq: Vec<u16> = (0..len).map(|_| rng.range(0, alphabet) as u16).collect();
        let cover = minimal_cover(&seq, &set, &cfg);
        let best = exhaustive_cover(&seq, &set, &cfg);
        assert_eq!(cover.cover_size, best, "seq {seq:?}");
        // The reconstruction must tile the sequence exactly.
        let total: usize = cover.assignments.iter().map(|(_, l, _)| l).sum();
        assert_eq!(total, seq.len());
        checked += 1;
    }
}

#[test]
fn apriori_subpattern_support_dominates_on_random_corpora() {
    use motif_core::mine::{count_occurrences, threshold_schedule};
    let mut rng = Lcg::new(0x53);
    for _ in 0..30 {
        let alphabet = rng.range(2, 7);
        let n_seqs = rng.range(1, 5);
        let corpus = random_corpus(&mut rng, n_seqs, 25, alphabet);
        let cfg = random_cfg(&mut rng, alphabet);
        let mined = mine_patterns(&corpus, &cfg).unwrap();
        for p in mined.patterns.iter().filter(|p| !p.is_run && p.canonical.len() > 2) {
            let (_, h) = threshold_schedule(p.canonical.len(), &cfg).unwrap();
            let own = count_occurrences(&corpus, &p.canonical, h);
            let prefix = count_occurrences(&corpus, &p.canonical[..p.canonical.len() - 1], h);
            let suffix = count_occurrences(&corpus, &p.canonical[1..], h);
            assert!(prefix >= own, "prefix support dropped for {:?}", p.canonical);
            assert!(suffix >= own, "suffix support dropped for {:?}", p.canonical);
        }
    }
}

#[test]
fn motif_maps_partition_frames_under_fuzzing() {
    use motif_core::mine::{motif_segment_map, Cover, Piece};
    use motif_core::segment::SegmentMap;
    let mut rng = Lcg::new(0x54);
    for _ in 0..1000 {
        let frames = rng.range(4, 60);
        // Random atom map.
        let mut starts = vec![0usize];
        let mut at = 0;
        loop {
            at += rng.range(1, 5);
            if at >= frames {
                break;
            }
            starts.push(at);
        }
        let atom_map = SegmentMap::from_boundaries(&starts, frames);
        // Random cover over the atoms.
        let n = atom_map.count();
        let mut assignments = Vec::new();
        let mut i = 0;
        while i < n {
            let len = rng.range(1, (n - i + 1).min(5));
            let piece = if len == 1 && rng.uniform() < 0.5 {
                Piece::Singleton
            } else {
                Piece::Pattern(rng.range(0, 10))
            };
            assignments.push((i, len, piece));
            i += len;
        }
        let cover_size = assignments.len();
        let cover = Cover { assignments, cover_size };
        let motif = motif_segment_map(&cover, &atom_map).unwrap();
        motif.assert_partition();
        // Motif boundaries never split an atom.
        for &(s, _) in &motif.segments {
            assert!(atom_map.boundaries.contains(&s));
        }
    }
}
