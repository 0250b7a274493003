//! Morphological thinning to one-pixel-wide skeletons.
//!
//! Core pass: Zhang–Suen two-subiteration parallel thinning. That scheme is
//! known to leave 2x2 foreground squares behind on some staircase
//! configurations, so a guarded cleanup follows: corners of residual 2x2
//! blocks are deleted one at a time, each deletion accepted only if the
//! global 8-connected component count is unchanged. The two phases repeat
//! until a full round changes nothing, which makes the whole operator
//! idempotent by construction.

use super::mask::BinaryMask;

/// Neighbors in the conventional order P2..P9: N, NE, E, SE, S, SW, W, NW.
#[inline]
fn neighbors(m: &BinaryMask, y: usize, x: usize) -> [u8; 8] {
    let (y, x) = (y as isize, x as isize);
    [
        m.at(y - 1, x),
        m.at(y - 1, x + 1),
        m.at(y, x + 1),
        m.at(y + 1, x + 1),
        m.at(y + 1, x),
        m.at(y + 1, x - 1),
        m.at(y, x - 1),
        m.at(y - 1, x - 1),
    ]
}

/// Number of 0->1 transitions around the circular neighbor sequence.
#[inline]
fn transitions(n: &[u8; 8]) -> u32 {
    let mut a = 0;
    for i in 0..8 {
        if n[i] == 0 && n[(i + 1) % 8] == 1 {
            a += 1;
        }
    }
    a
}

/// One parallel subiteration; `second` selects the east/south vs west/north
/// deletion conditions. Returns whether anything was deleted.
fn zhang_suen_subiteration(m: &mut BinaryMask, second: bool) -> bool {
    let (h, w) = m.dims();
    let mut doomed = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !m.get(y, x) {
                continue;
            }
            let n = neighbors(m, y, x);
            let b: u32 = n.iter().map(|&v| v as u32).sum();
            if !(2..=6).contains(&b) || transitions(&n) != 1 {
                continue;
            }
            let (p2, p4, p6, p8) = (n[0], n[2], n[4], n[6]);
            let ok = if second {
                p2 * p4 * p8 == 0 && p2 * p6 * p8 == 0
            } else {
                p2 * p4 * p6 == 0 && p4 * p6 * p8 == 0
            };
            if ok {
                doomed.push((y, x));
            }
        }
    }
    for &(y, x) in &doomed {
        m.set(y, x, false);
    }
    !doomed.is_empty()
}

fn zhang_suen_fixpoint(m: &mut BinaryMask) -> bool {
    let mut any = false;
    loop {
        let a = zhang_suen_subiteration(m, false);
        let b = zhang_suen_subiteration(m, true);
        if !a && !b {
            return any;
        }
        any = true;
    }
}

/// 8-connected component count.
pub fn component_count(m: &BinaryMask) -> usize {
    labels(m).1
}

/// Row-major label grid (0 = background, components numbered from 1) plus
/// the component count.
fn labels(m: &BinaryMask) -> (Vec<usize>, usize) {
    let (h, w) = m.dims();
    let mut label = vec![0usize; h * w];
    let mut next = 0usize;
    let mut stack = Vec::new();
    for sy in 0..h {
        for sx in 0..w {
            if !m.get(sy, sx) || label[sy * w + sx] != 0 {
                continue;
            }
            next += 1;
            label[sy * w + sx] = next;
            stack.push((sy, sx));
            while let Some((y, x)) = stack.pop() {
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let (ny, nx) = (y as isize + dy, x as isize + dx);
                        if m.at(ny, nx) == 1 {
                            let idx = ny as usize * w + nx as usize;
                            if label[idx] == 0 {
                                label[idx] = next;
                                stack.push((ny as usize, nx as usize));
                            }
                        }
                    }
                }
            }
        }
    }
    (label, next)
}

/// Keeps only the largest 8-connected component; ties go to the component
/// met first in row-major order. Empty input stays empty.
pub fn largest_component(m: &BinaryMask) -> BinaryMask {
    let (h, w) = m.dims();
    let (label, count) = labels(m);
    if count == 0 {
        return m.clone();
    }
    let mut sizes = vec![0usize; count + 1];
    for &l in &label {
        sizes[l] += 1;
    }
    // Labels are assigned in row-major discovery order, so the first maximum
    // is the earliest component.
    let best = (1..=count).max_by_key(|&l| (sizes[l], usize::MAX - l)).unwrap();
    let mut out = BinaryMask::new(h, w);
    for y in 0..h {
        for x in 0..w {
            if label[y * w + x] == best {
                out.set(y, x, true);
            }
        }
    }
    out
}

/// Deletes corners of residual 2x2 foreground squares, accepting a deletion
/// only when it keeps the component count intact. Returns whether anything
/// changed.
fn cleanup_blocks(m: &mut BinaryMask) -> bool {
    let (h, w) = m.dims();
    if h < 2 || w < 2 {
        return false;
    }
    let mut any = false;
    loop {
        let mut deleted = false;
        for y in 0..h - 1 {
            for x in 0..w - 1 {
                let full = m.get(y, x) && m.get(y, x + 1) && m.get(y + 1, x) && m.get(y + 1, x + 1);
                if !full {
                    continue;
                }
                let before = component_count(m);
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    m.set(y + dy, x + dx, false);
                    if component_count(m) == before {
                        deleted = true;
                        break;
                    }
                    m.set(y + dy, x + dx, true);
                }
                // If every corner is a bridge, connectivity wins over
                // strict one-pixel width and the block stays.
            }
        }
        if !deleted {
            return any;
        }
        any = true;
    }
}

/// Thins to a one-pixel-wide skeleton. Never adds pixels; empty input gives
/// empty output; applying it twice gives the same result as once.
pub fn skeletonize(mask: &BinaryMask) -> BinaryMask {
    let mut m = mask.clone();
    loop {
        let a = zhang_suen_fixpoint(&mut m);
        let b = cleanup_blocks(&mut m);
        if !a && !b {
            return m;
        }
    }
}

/// True if some pixel has an all-foreground 2x2 neighborhood — the
/// "thicker than one pixel" detector.
pub fn has_2x2_block(m: &BinaryMask) -> bool {
    let (h, w) = m.dims();
    if h < 2 || w < 2 {
        return false;
    }
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            if m.get(y, x) && m.get(y, x + 1) && m.get(y + 1, x) && m.get(y + 1, x + 1) {
                return true;
            }
        }
    }
    false
}
