//! Packed lattice sites.
//!
//! A site of `Z^d` (`d ≤ 4`) is stored as four 16-bit two's-complement
//! coordinates in one `u64`. Coordinates must satisfy `|c| < 32768`.

use crate::error::{Error, Result};

/// Hash map keyed by lattice sites with a deterministic hasher.
pub type SiteMap<V> = hashbrown::HashMap<Site, V, rustc_hash::FxBuildHasher>;

pub const MAX_DIM: usize = 4;
pub const COORD_LIMIT: i32 = 32767;

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site(u64);

impl Site {
    pub const ORIGIN: Site = Site(0);

    pub fn new(coords: &[i32]) -> Result<Site> {
        if coords.len() > MAX_DIM {
            return Err(crate::error::invalid("lattice dimension above 4"));
        }
        let mut packed = 0u64;
        for (axis, &c) in coords.iter().enumerate() {
            if c.abs() > COORD_LIMIT {
                return Err(Error::CoordinateOverflow { coord: c as i64 });
            }
            packed |= ((c as i16 as u16) as u64) << (16 * axis);
        }
        Ok(Site(packed))
    }

    /// Packs without the range check; callers guarantee `|c| ≤ 32767`.
    #[inline]
    pub(crate) fn pack_unchecked(coords: &[i32; MAX_DIM]) -> Site {
        let mut packed = 0u64;
        for (axis, &c) in coords.iter().enumerate() {
            packed |= ((c as i16 as u16) as u64) << (16 * axis);
        }
        Site(packed)
    }

    #[inline]
    pub fn coord(self, axis: usize) -> i32 {
        ((self.0 >> (16 * axis)) as u16) as i16 as i32
    }

    pub fn coords(self) -> [i32; MAX_DIM] {
        [self.coord(0), self.coord(1), self.coord(2), self.coord(3)]
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    pub fn offset(self, step: &[i32]) -> Result<Site> {
        let mut c = self.coords();
        for (axis, s) in step.iter().enumerate() {
            c[axis] += s;
        }
        Site::new(&c[..step.len()])
    }

    /// Wraps every coordinate into `{-r, ..., r-1}` (a torus of side `2r`).
    pub fn wrap(self, dim: usize, r: i32) -> Site {
        let mut c = self.coords();
        for x in c.iter_mut().take(dim) {
            *x = wrap_coord(*x, r);
        }
        Site::pack_unchecked(&c)
    }
}

#[inline]
pub fn wrap_coord(x: i32, r: i32) -> i32 {
    let side = 2 * r;
    (x + r).rem_euclid(side) - r
}
