//! Directional 3D thinning by simple-point deletion.
//!
//! Six subiterations (−z, +z, −y, +y, −x, +x) peel border voxels that are
//! simple and are not curve endpoints. Candidates for one subiteration are
//! found in parallel against a frozen snapshot; they are then deleted one by
//! one in increasing index order, each re-tested against the current state.
//! The serial re-test is what preserves topology, and the fixed order makes
//! the result independent of thread count. A voxel that a deletion in the
//! same scan has reduced to a strand end is deferred to a later pass.
//!
//! A voxel is simple (26/6 topology) iff its 26-neighbourhood foreground has
//! exactly one 26-component and the background of its 18-neighbourhood has
//! exactly one 6-component touching a face neighbour.

use crate::exec;
use crate::volume::{Coord, Dims, VoxelGrid, OFFSETS_26};

/// Neighbourhood bit tables indexed by position in [`OFFSETS_26`].
struct Tables {
    adj26: [u32; 26],
    adj6_in_18: [u32; 26],
    n18: u32,
    face: u32,
}

const fn l1(o: [isize; 3]) -> isize {
    o[0].abs() + o[1].abs() + o[2].abs()
}

const TABLES: Tables = {
    let mut adj26 = [0u32; 26];
    let mut adj6_in_18 = [0u32; 26];
    let mut n18 = 0u32;
    let mut face = 0u32;
    let mut a = 0;
    while a < 26 {
        let oa = OFFSETS_26[a];
        if l1(oa) <= 2 {
            n18 |= 1 << a;
        }
        if l1(oa) == 1 {
            face |= 1 << a;
        }
        let mut b = 0;
        while b < 26 {
            if a != b {
                let ob = OFFSETS_26[b];
                let d = [oa[0] - ob[0], oa[1] - ob[1], oa[2] - ob[2]];
                if d[0].abs() <= 1 && d[1].abs() <= 1 && d[2].abs() <= 1 {
                    adj26[a] |= 1 << b;
                }
                if l1(d) == 1 && l1(oa) <= 2 && l1(ob) <= 2 {
                    adj6_in_18[a] |= 1 << b;
                }
            }
            b += 1;
        }
        a += 1;
    }
    Tables {
        adj26,
        adj6_in_18,
        n18,
        face,
    }
};

/// Bits of the component of `set` containing `seed`, under `adj`.
#[inline]
fn flood(set: u32, seed: u32, adj: &[u32; 26]) -> u32 {
    let mut comp = seed;
    let mut frontier = seed;
    while frontier != 0 {
        let b = frontier.trailing_zeros() as usize;
        frontier &= frontier - 1;
        let grow = adj[b] & set & !comp;
        comp |= grow;
        frontier |= grow;
    }
    comp
}

/// Simple-point test on a 26-bit neighbourhood (centre excluded).
#[inline]
pub(crate) fn is_simple(nbhd: u32) -> bool {
    if nbhd == 0 {
        return false;
    }
    let t = &TABLES;
    let first = nbhd & nbhd.wrapping_neg();
    if flood(nbhd, first, &t.adj26) != nbhd {
        return false;
    }
    let bg = !nbhd & t.n18 & ((1 << 26) - 1);
    let mut seeds = bg & t.face;
    if seeds == 0 {
        return false;
    }
    let s = seeds & seeds.wrapping_neg();
    let comp = flood(bg, s, &t.adj6_in_18);
    seeds &= !comp;
    seeds == 0
}

/// Volume padded by one background voxel on every side.
struct Padded {
    buf: Vec<u8>,
    dims: Dims,
    offsets: [isize; 26],
}

impl Padded {
    fn new(mask: &VoxelGrid) -> Self {
        let d = mask.dims();
        let dims = Dims::new(d.depth + 2, d.height + 2, d.width + 2);
        let mut buf = vec![0u8; dims.len()];
        for i in 0..d.len() {
            if mask.is_set(i) {
                let [z, y, x] = d.coord(i);
                buf[dims.index([z + 1, y + 1, x + 1])] = 1;
            }
        }
        let plane = (dims.height * dims.width) as isize;
        let row = dims.width as isize;
        let offsets = OFFSETS_26.map(|[dz, dy, dx]| dz * plane + dy * row + dx);
        Padded { buf, dims, offsets }
    }

    #[inline]
    fn nbhd(&self, p: usize) -> u32 {
        let mut n = 0u32;
        for (k, &o) in self.offsets.iter().enumerate() {
            n |= u32::from(self.buf[(p as isize + o) as usize]) << k;
        }
        n
    }

    #[inline]
    fn deletable(&self, p: usize) -> bool {
        let n = self.nbhd(p);
        n.count_ones() > 1 && is_simple(n)
    }
}

/// Neighbour count at or below which a voxel touched in this scan waits.
const THIN_DEFER: u32 = 2;

/// Positions of the six face neighbours in [`OFFSETS_26`], in subiteration
/// order −z, +z, −y, +y, −x, +x.
const DIRECTIONS: [usize; 6] = [4, 21, 10, 15, 12, 13];

/// Thins `mask` to a one-voxel-wide curve skeleton; returns skeleton voxels
/// in increasing linear-index order.
pub(crate) fn thin(mask: &VoxelGrid) -> Vec<Coord> {
    let mut vol = Padded::new(mask);
    let mut active: Vec<usize> = (0..vol.buf.len()).filter(|&i| vol.buf[i] != 0).collect();
    // a voxel left with at most THIN_DEFER neighbours by a deletion in the
    // current scan waits for the next one, otherwise a two-voxel-wide strand
    // whose whole length is border gets eaten from its end in one scan
    let mut touched = vec![0u32; vol.buf.len()];
    let mut pass = 0u32;
    loop {
        let mut removed = false;
        for &dir in &DIRECTIONS {
            pass += 1;
            let off = vol.offsets[dir];
            let candidates = {
                let v = &vol;
                exec::filter(&active, |p| {
                    v.buf[(p as isize + off) as usize] == 0 && v.deletable(p)
                })
            };
            if candidates.is_empty() {
                continue;
            }
            for p in candidates {
                if !(touched[p] == pass && vol.nbhd(p).count_ones() <= THIN_DEFER) && vol.deletable(p) {
                    vol.buf[p] = 0;
                    removed = true;
                    for &o in &vol.offsets {
                        touched[(p as isize + o) as usize] = pass;
                    }
                }
            }
            active.retain(|&p| vol.buf[p] != 0);
        }
        if !removed {
            break;
        }
    }
    active
        .into_iter()
        .map(|p| {
            let [z, y, x] = vol.dims.coord(p);
            [z - 1, y - 1, x - 1]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bit(o: [isize; 3]) -> u32 {
        1 << OFFSETS_26.iter().position(|&p| p == o).unwrap()
    }

    #[test]
    fn direction_table_points_at_faces() {
        let want = [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]];
        for (k, &d) in DIRECTIONS.iter().enumerate() {
            assert_eq!(OFFSETS_26[d], want[k]);
        }
    }

    #[test]
    fn simple_point_basics() {
        // isolated point: removing it deletes a component
        assert!(!is_simple(0));
        // endpoint of a line: simple
        assert!(is_simple(bit([0, 0, 1])));
        // middle of a line: removal splits it
        assert!(!is_simple(bit([0, 0, 1]) | bit([0, 0, -1])));
        // fully surrounded: removal makes a cavity
        assert!(!is_simple((1 << 26) - 1));
        // corner of a solid cube: simple
        let corner = [
            [0, 0, 1],
            [0, 1, 0],
            [0, 1, 1],
            [1, 0, 0],
            [1, 0, 1],
            [1, 1, 0],
            [1, 1, 1],
        ]
        .iter()
        .fold(0, |acc, &o| acc | bit(o));
        assert!(is_simple(corner));
    }

    #[test]
    fn bridging_point_is_not_simple() {
        // two separate arcs meet only through the centre
        let n = bit([0, 0, 1]) | bit([0, 1, 1]) | bit([0, 0, -1]) | bit([0, 1, -1]);
        assert!(!is_simple(n));
    }
}
