//! Shared test helpers: naive descriptor oracles written independently of the
//! library kernels, finite-difference checking, and small image generators.

#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use porogen::grid::BinaryImage;
use porogen::morph::Phase;

pub fn random_image(width: usize, height: usize, phi: f64, seed: u64) -> BinaryImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BinaryImage::new(
        width,
        height,
        (0..width * height)
            .map(|_| (rng.random::<f64>() < phi) as u8)
            .collect(),
    )
}

fn in_phase(img: &BinaryImage, x: usize, y: usize, phase: Phase) -> bool {
    img.get(x, y) == phase.label()
}

/// Pair-enumeration two-point correlation along `dir`, non-periodic.
pub fn oracle_s2(img: &BinaryImage, phase: Phase, dir: (usize, usize), r_max: usize) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    (0..=r_max)
        .map(|r| {
            let mut hits = 0u64;
            let mut total = 0u64;
            for y in 0..h {
                for x in 0..w {
                    let (x2, y2) = (x + r * dir.0, y + r * dir.1);
                    if x2 < w && y2 < h {
                        total += 1;
                        if in_phase(img, x, y, phase) && in_phase(img, x2, y2, phase) {
                            hits += 1;
                        }
                    }
                }
            }
            hits as f64 / total as f64
        })
        .collect()
}

/// Segment-enumeration lineal path: all r+1 pixels of the segment in phase.
pub fn oracle_lineal(img: &BinaryImage, phase: Phase, dir: (usize, usize), r_max: usize) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    (0..=r_max)
        .map(|r| {
            let mut hits = 0u64;
            let mut total = 0u64;
            for y in 0..h {
                for x in 0..w {
                    let (x_end, y_end) = (x + r * dir.0, y + r * dir.1);
                    if x_end < w && y_end < h {
                        total += 1;
                        let all_in = (0..=r)
                            .all(|t| in_phase(img, x + t * dir.0, y + t * dir.1, phase));
                        if all_in {
                            hits += 1;
                        }
                    }
                }
            }
            hits as f64 / total as f64
        })
        .collect()
}

/// Depth-first flood fill, deliberately different traversal order from the
/// library's BFS labelling.
pub fn oracle_flood_labels(img: &BinaryImage, phase: Phase, eight: bool) -> Vec<u32> {
    let (w, h) = (img.width(), img.height());
    let mut labels = vec![0u32; w * h];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !in_phase(img, start % w, start / w, phase) || labels[start] != 0 {
            continue;
        }
        next += 1;
        stack.push(start);
        labels[start] = next;
        while let Some(idx) = stack.pop() {
            let (x, y) = ((idx % w) as isize, (idx / w) as isize);
            let neighbors: &[(isize, isize)] = if eight {
                &[(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)]
            } else {
                &[(1, 0), (-1, 0), (0, 1), (0, -1)]
            };
            for &(dx, dy) in neighbors {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let n = ny as usize * w + nx as usize;
                if labels[n] == 0 && in_phase(img, nx as usize, ny as usize, phase) {
                    labels[n] = next;
                    stack.push(n);
                }
            }
        }
    }
    labels
}

/// Two labelings describe the same partition (labels may be permuted).
pub fn same_partition(a: &[u32], b: &[u32]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut a_to_b = std::collections::HashMap::new();
    let mut b_to_a = std::collections::HashMap::new();
    for (&la, &lb) in a.iter().zip(b) {
        if (la == 0) != (lb == 0) {
            return false;
        }
        if la == 0 {
            continue;
        }
        if *a_to_b.entry(la).or_insert(lb) != lb || *b_to_a.entry(lb).or_insert(la) != la {
            return false;
        }
    }
    true
}

/// Pair-enumeration two-point cluster function on top of the flood labels.
pub fn oracle_c2(img: &BinaryImage, phase: Phase, dir: (usize, usize), r_max: usize) -> Vec<f64> {
    let labels = oracle_flood_labels(img, phase, false);
    let (w, h) = (img.width(), img.height());
    (0..=r_max)
        .map(|r| {
            let mut hits = 0u64;
            let mut total = 0u64;
            for y in 0..h {
                for x in 0..w {
                    let (x2, y2) = (x + r * dir.0, y + r * dir.1);
                    if x2 < w && y2 < h {
                        total += 1;
                        let a = labels[y * w + x];
                        if a != 0 && a == labels[y2 * w + x2] {
                            hits += 1;
                        }
                    }
                }
            }
            hits as f64 / total as f64
        })
        .collect()
}

/// Window-enumeration pattern histogram with explicit MSB-first bit packing.
pub fn oracle_pattern(img: &BinaryImage, n: usize) -> std::collections::BTreeMap<u64, f64> {
    let (w, h) = (img.width(), img.height());
    let mut counts: std::collections::BTreeMap<u64, u64> = std::collections::BTreeMap::new();
    for y0 in 0..=h - n {
        for x0 in 0..=w - n {
            let mut code: u64 = 0;
            let mut bit_index = n * n;
            for dy in 0..n {
                for dx in 0..n {
                    bit_index -= 1;
                    if img.get(x0 + dx, y0 + dy) == 1 {
                        code |= 1 << bit_index;
                    }
                }
            }
            *counts.entry(code).or_insert(0) += 1;
        }
    }
    let total = ((w - n + 1) * (h - n + 1)) as f64;
    counts.into_iter().map(|(c, k)| (c, k as f64 / total)).collect()
}

/// Central finite differences of `f` at `x`, compared against `analytic` at
/// the given coordinates. Returns the worst relative error.
pub fn max_relative_fd_error(
    f: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    coords: &[usize],
    h: f64,
) -> f64 {
    let mut worst = 0.0f64;
    for &i in coords {
        let mut plus = x.to_vec();
        plus[i] += h;
        let mut minus = x.to_vec();
        minus[i] -= h;
        let fd = (f(&plus) - f(&minus)) / (2.0 * h);
        let denom = fd.abs().max(analytic[i].abs()).max(1e-8);
        worst = worst.max((fd - analytic[i]).abs() / denom);
    }
    worst
}

/// Deterministic choice of `count` coordinates in `0..len`.
pub fn pick_coords(len: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.random_range(0..len)).collect()
}
