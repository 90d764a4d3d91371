//! K-means codebook over atom latent tokens.
//!
//! Training fits centroids with k-means++ initialization and Lloyd
//! iterations; inference assigns a token to its nearest centroid.

use std::fmt;
use std::fs;
use std::io::{self, Read as _};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::pose::atomic_write;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// k×d centroids, row-major.
    pub centroids: Vec<f32>,
    pub k: usize,
    pub dim: usize,
}

#[derive(Debug)]
pub enum CodebookError {
    TooFewPoints { points: usize, k: usize },
    DimensionMismatch { expected: usize, got: usize },
    BadMagic,
    VersionUnsupported(u32),
    Truncated,
    Io(io::Error),
}

impl fmt::Display for CodebookError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodebookError::TooFewPoints { points, k } => {
                write!(f, "{points} points cannot seed {k} clusters")
            }
            CodebookError::DimensionMismatch { expected, got } => {
                write!(f, "token dimension {got}, codebook expects {expected}")
            }
            CodebookError::BadMagic => write!(f, "not a codebook file (bad magic)"),
            CodebookError::VersionUnsupported(v) => write!(f, "unsupported codebook version {v}"),
            CodebookError::Truncated => write!(f, "codebook payload truncated"),
            CodebookError::Io(e) => write!(f, "codebook io: {e}"),
        }
    }
}

impl std::error::Error for CodebookError {}

impl From<io::Error> for CodebookError {
    fn from(e: io::Error) -> Self {
        CodebookError::Io(e)
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = (*x - *y) as f64;
        s += d * d;
    }
    s
}

/// Fits a codebook with k-means++ seeding and Lloyd iterations until the
/// maximum centroid shift drops below 1e-6 or 300 iterations pass. Empty
/// clusters are re-seeded to the point farthest from its assigned centroid.
/// Deterministic for a given seed; inertia never increases across iterations.
pub fn fit_kmeans(
    tokens: &[f32],
    n: usize,
    dim: usize,
    k: usize,
    seed: u64,
) -> Result<Codebook, CodebookError> {
    assert_eq!(tokens.len(), n * dim, "token buffer shape mismatch");
    assert!(k >= 1);
    if n < k {
        return Err(CodebookError::TooFewPoints { points: n, k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point = |i: usize| &tokens[i * dim..(i + 1) * dim];

    // k-means++ seeding.
    let mut centroids = vec![0.0f32; k * dim];
    let first = rng.gen_range(0..n);
    centroids[0..dim].copy_from_slice(point(first));
    let mut best_d2: Vec<f64> = (0..n).map(|i| sq_dist(point(i), &centroids[0..dim])).collect();
    for c in 1..k {
        let total: f64 = best_d2.iter().sum();
        let pick = if total <= 0.0 {
            // All points coincide with chosen centroids; pick uniformly.
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in best_d2.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centroids[c * dim..(c + 1) * dim].copy_from_slice(point(pick));
        for i in 0..n {
            let d = sq_dist(point(i), &centroids[c * dim..(c + 1) * dim]);
            if d < best_d2[i] {
                best_d2[i] = d;
            }
        }
    }

    let mut assign = vec![0usize; n];
    let mut prev_inertia = f64::INFINITY;
    for _iter in 0..300 {
        // Assignment step; ties go to the lowest centroid index.
        let mut inertia = 0.0f64;
        for i in 0..n {
            let mut best = f64::INFINITY;
            let mut best_c = 0;
            for c in 0..k {
                let d = sq_dist(point(i), &centroids[c * dim..(c + 1) * dim]);
                if d < best {
                    best = d;
                    best_c = c;
                }
            }
            assign[i] = best_c;
            inertia += best;
        }
        debug_assert!(inertia <= prev_inertia + 1e-9, "inertia increased: {prev_inertia} -> {inertia}");
        prev_inertia = inertia;

        // Update step.
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assign[i];
            counts[c] += 1;
            for j in 0..dim {
                sums[c * dim + j] += point(i)[j] as f64;
            }
        }
        let mut new_centroids = centroids.clone();
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    new_centroids[c * dim + j] = (sums[c * dim + j] / counts[c] as f64) as f32;
                }
            }
        }
        // Re-seed empty clusters to the point farthest from its centroid.
        let mut empties: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        if !empties.is_empty() {
            let mut dist_order: Vec<(usize, f64)> = (0..n)
                .map(|i| {
                    let c = assign[i];
                    (i, sq_dist(point(i), &new_centroids[c * dim..(c + 1) * dim]))
                })
                .collect();
            dist_order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            for (slot, c) in empties.drain(..).enumerate() {
                let src = dist_order[slot.min(n - 1)].0;
                new_centroids[c * dim..(c + 1) * dim].copy_from_slice(point(src));
            }
        }

        let mut max_shift = 0.0f64;
        for c in 0..k {
            let s = sq_dist(
                &centroids[c * dim..(c + 1) * dim],
                &new_centroids[c * dim..(c + 1) * dim],
            )
            .sqrt();
            max_shift = max_shift.max(s);
        }
        centroids = new_centroids;
        if max_shift < 1e-6 {
            break;
        }
    }

    Ok(Codebook { centroids, k, dim })
}

impl Codebook {
    /// Nearest centroid by Euclidean distance; ties break to the lowest index.
    pub fn assign(&self, token: &[f32]) -> Result<usize, CodebookError> {
        if token.len() != self.dim {
            return Err(CodebookError::DimensionMismatch { expected: self.dim, got: token.len() });
        }
        let mut best = f64::INFINITY;
        let mut best_c = 0;
        for c in 0..self.k {
            let d = sq_dist(token, &self.centroids[c * self.dim..(c + 1) * self.dim]);
            if d < best {
                best = d;
                best_c = c;
            }
        }
        Ok(best_c)
    }

    pub fn assign_all(&self, tokens: &[f32], n: usize) -> Result<Vec<u16>, CodebookError> {
        (0..n)
            .map(|i| {
                self.assign(&tokens[i * self.dim..(i + 1) * self.dim])
                    .map(|c| c as u16)
            })
            .collect()
    }

    /// Total squared distance of points to their assigned centroids.
    pub fn inertia(&self, tokens: &[f32], n: usize) -> f64 {
        (0..n)
            .map(|i| {
                let p = &tokens[i * self.dim..(i + 1) * self.dim];
                (0..self.k)
                    .map(|c| sq_dist(p, &self.centroids[c * self.dim..(c + 1) * self.dim]))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum()
    }
}

const MAGIC: &[u8; 4] = b"MCBK";
const VERSION: u32 = 1;

/// Writes the codebook: magic "MCBK", u32 version, u32 k, u32 d, then k*d
/// little-endian f32.
pub fn write_codebook(cb: &Codebook, path: &Path) -> Result<(), CodebookError> {
    let mut buf = Vec::with_capacity(16 + cb.centroids.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(cb.k as u32).to_le_bytes());
    buf.extend_from_slice(&(cb.dim as u32).to_le_bytes());
    for v in &cb.centroids {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &buf)?;
    Ok(())
}

pub fn read_codebook(path: &Path) -> Result<Codebook, CodebookError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 {
        return Err(CodebookError::Truncated);
    }
    if &bytes[0..4] != MAGIC {
        return Err(CodebookError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(CodebookError::VersionUnsupported(version));
    }
    let k = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if bytes.len() != 16 + k * dim * 4 {
        return Err(CodebookError::Truncated);
    }
    let centroids: Vec<f32> = (0..k * dim)
        .map(|i| f32::from_le_bytes(bytes[16 + 4 * i..20 + 4 * i].try_into().unwrap()))
        .collect();
    Ok(Codebook { centroids, k, dim })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n_per: usize, centers: &[[f32; 2]], spread: f32, seed: u64) -> (Vec<f32>, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for c in centers {
            for _ in 0..n_per {
                out.push(c[0] + spread * (rng.gen::<f32>() - 0.5));
                out.push(c[1] + spread * (rng.gen::<f32>() - 0.5));
            }
        }
        (out, n_per * centers.len())
    }

    #[test]
    fn n_equals_k_reproduces_points() {
        let tokens = vec![0.0f32, 0.0, 10.0, 0.0, 0.0, 10.0];
        let cb = fit_kmeans(&tokens, 3, 2, 3, 1).unwrap();
        assert!(cb.inertia(&tokens, 3) < 1e-12);
        for i in 0..3 {
            let c = cb.assign(&tokens[i * 2..(i + 1) * 2]).unwrap();
            assert_eq!(&cb.centroids[c * 2..(c + 1) * 2], &tokens[i * 2..(i + 1) * 2]);
        }
    }

    #[test]
    fn k_one_gives_global_mean() {
        let tokens = vec![1.0f32, 2.0, 3.0, 6.0, 5.0, 10.0];
        let cb = fit_kmeans(&tokens, 3, 2, 1, 5).unwrap();
        assert!((cb.centroids[0] - 3.0).abs() < 1e-6);
        assert!((cb.centroids[1] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn two_blobs_recover_their_means() {
        let centers = [[-5.0f32, 0.0], [5.0, 1.0]];
        let (tokens, n) = blobs(200, &centers, 1.0, 9);
        let cb = fit_kmeans(&tokens, n, 2, 2, 3).unwrap();
        // Each centroid within 3*sigma/sqrt(n/2) of a blob mean; uniform
        // spread 1.0 has sigma ~0.29, n/2 = 200.
        let tol = 3.0 * 0.29 / (200.0f32).sqrt() + 0.02;
        for c in centers.iter() {
            let hit = (0..2).any(|i| {
                let dx = cb.centroids[i * 2] - c[0];
                let dy = cb.centroids[i * 2 + 1] - c[1];
                (dx * dx + dy * dy).sqrt() < tol
            });
            assert!(hit, "no centroid near {c:?}: {:?}", cb.centroids);
        }
    }

    #[test]
    fn assign_exact_centroid_and_tie_rule() {
        // Centroids 2 and 5 sit symmetrically around the origin; the rest
        // are far away. A query at the origin ties and picks index 2.
        let far = 100.0f32;
        let mut centroids = vec![0.0f32; 8 * 2];
        for i in 0..8 {
            centroids[i * 2] = far + i as f32;
        }
        centroids[2 * 2] = 1.0;
        centroids[2 * 2 + 1] = 0.0;
        centroids[5 * 2] = -1.0;
        centroids[5 * 2 + 1] = 0.0;
        let cb = Codebook { centroids, k: 8, dim: 2 };
        assert_eq!(cb.assign(&[far + 7.0, 0.0]).unwrap(), 7);
        assert_eq!(cb.assign(&[0.0, 0.0]).unwrap(), 2);
    }

    #[test]
    fn assign_rejects_dimension_mismatch() {
        let cb = Codebook { centroids: vec![0.0; 4], k: 2, dim: 2 };
        match cb.assign(&[1.0, 2.0, 3.0]) {
            Err(CodebookError::DimensionMismatch { .. }) => {}
            other => panic!("expected DimensionMismatch, got {other:?}"),
        }
    }

    #[test]
    fn assign_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dim = 6;
        let k = 20;
        let centroids: Vec<f32> = (0..k * dim).map(|_| rng.gen::<f32>() * 4.0 - 2.0).collect();
        let cb = Codebook { centroids: centroids.clone(), k, dim };
        for _ in 0..1000 {
            let tok: Vec<f32> = (0..dim).map(|_| rng.gen::<f32>() * 4.0 - 2.0).collect();
            let got = cb.assign(&tok).unwrap();
            let mut best = f64::INFINITY;
            let mut want = 0;
            for c in 0..k {
                let mut d = 0.0f64;
                for j in 0..dim {
                    let diff = (tok[j] - centroids[c * dim + j]) as f64;
                    d += diff * diff;
                }
                if d < best {
                    best = d;
                    want = c;
                }
            }
            assert_eq!(got, want);
        }
    }

    #[test]
    fn fit_is_deterministic_and_centroids_assign_to_themselves() {
        let (tokens, n) = blobs(60, &[[-3.0, 2.0], [4.0, -1.0], [0.0, 6.0]], 1.5, 21);
        let a = fit_kmeans(&tokens, n, 2, 3, 77).unwrap();
        let b = fit_kmeans(&tokens, n, 2, 3, 77).unwrap();
        assert_eq!(a, b);
        for i in 0..a.k {
            assert_eq!(a.assign(&a.centroids[i * 2..(i + 1) * 2]).unwrap(), i);
        }
    }

    #[test]
    fn permuting_input_preserves_inertia_on_separated_blobs() {
        let (tokens, n) = blobs(80, &[[-6.0, 0.0], [6.0, 0.0]], 1.0, 13);
        let cb1 = fit_kmeans(&tokens, n, 2, 2, 5).unwrap();
        // Reverse point order.
        let mut rev = Vec::with_capacity(tokens.len());
        for i in (0..n).rev() {
            rev.extend_from_slice(&tokens[i * 2..(i + 1) * 2]);
        }
        let cb2 = fit_kmeans(&rev, n, 2, 2, 5).unwrap();
        let i1 = cb1.inertia(&tokens, n);
        let i2 = cb2.inertia(&tokens, n);
        assert!((i1 - i2).abs() < 1e-6 * i1.max(1.0), "{i1} vs {i2}");
    }

    #[test]
    fn too_few_points_is_rejected() {
        match fit_kmeans(&[0.0, 0.0], 1, 2, 2, 0) {
            Err(CodebookError::TooFewPoints { .. }) => {}
            other => panic!("expected TooFewPoints, got {other:?}"),
        }
    }

    #[test]
    fn codebook_file_round_trip_is_byte_stable() {
        let dir = std::env::temp_dir().join(format!("cb-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let cb = Codebook { centroids: vec![1.5, -0.25, 0.0, 3.75], k: 2, dim: 2 };
        let p1 = dir.join("a.mcbk");
        let p2 = dir.join("b.mcbk");
        write_codebook(&cb, &p1).unwrap();
        let back = read_codebook(&p1).unwrap();
        assert_eq!(back, cb);
        write_codebook(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
