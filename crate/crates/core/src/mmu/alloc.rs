//! Toy physical frame allocator with separate table and user regions.

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    Free,
    /// Taken by someone outside the simulation (fragmentation).
    Occupied,
    Table,
    User,
    Sensitive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

/// A frame range `[lo, hi)` handed out from one end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub lo: u64,
    pub hi: u64,
    pub dir: Direction,
}

impl Region {
    pub fn contains(&self, frame: u64) -> bool {
        (self.lo..self.hi).contains(&frame)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocError {
    OutOfMemory,
}

#[derive(Debug, Clone)]
pub struct Allocator {
    kinds: Vec<FrameKind>,
    table: Region,
    user: Region,
    table_cursor: u64,
    user_cursor: u64,
    /// Frames per row index; when set, only frames on even row indices are used.
    even_rows_only: Option<u64>,
}

impl Allocator {
    pub fn new(frames: u64, table: Region, user: Region) -> Self {
        let mut a = Self {
            kinds: vec![FrameKind::Free; frames as usize],
            table,
            user,
            table_cursor: 0,
            user_cursor: 0,
            even_rows_only: None,
        };
        a.reset_cursors();
        a
    }

    fn reset_cursors(&mut self) {
        self.table_cursor = match self.table.dir {
            Direction::Up => self.table.lo,
            Direction::Down => self.table.hi,
        };
        self.user_cursor = match self.user.dir {
            Direction::Up => self.user.lo,
            Direction::Down => self.user.hi,
        };
    }

    pub fn frames(&self) -> u64 {
        self.kinds.len() as u64
    }

    pub fn table_region(&self) -> Region {
        self.table
    }

    pub fn user_region(&self) -> Region {
        self.user
    }

    pub fn set_regions(&mut self, table: Region, user: Region) {
        self.table = table;
        self.user = user;
        self.reset_cursors();
    }

    pub fn set_even_rows_only(&mut self, frames_per_row: Option<u64>) {
        self.even_rows_only = frames_per_row;
    }

    pub fn kind(&self, frame: u64) -> FrameKind {
        self.kinds.get(frame as usize).copied().unwrap_or(FrameKind::Occupied)
    }

    fn usable(&self, frame: u64) -> bool {
        self.kinds[frame as usize] == FrameKind::Free
            && self.even_rows_only.is_none_or(|f| (frame / f).is_multiple_of(2))
    }

    fn take(region: Region, cursor: &mut u64, usable: impl Fn(u64) -> bool) -> Option<u64> {
        match region.dir {
            Direction::Up => {
                while *cursor < region.hi {
                    let f = *cursor;
                    *cursor += 1;
                    if usable(f) {
                        return Some(f);
                    }
                }
                None
            }
            Direction::Down => {
                while *cursor > region.lo {
                    *cursor -= 1;
                    if usable(*cursor) {
                        return Some(*cursor);
                    }
                }
                None
            }
        }
    }

    pub fn alloc_table(&mut self) -> Result<u64, AllocError> {
        let mut cur = self.table_cursor;
        let f = Self::take(self.table, &mut cur, |f| self.usable(f)).ok_or(AllocError::OutOfMemory)?;
        self.table_cursor = cur;
        self.kinds[f as usize] = FrameKind::Table;
        Ok(f)
    }

    pub fn alloc_user(&mut self, kind: FrameKind) -> Result<u64, AllocError> {
        let mut cur = self.user_cursor;
        let f = Self::take(self.user, &mut cur, |f| self.usable(f)).ok_or(AllocError::OutOfMemory)?;
        self.user_cursor = cur;
        self.kinds[f as usize] = kind;
        Ok(f)
    }

    /// 512 contiguous, 2MiB-aligned user frames; returns the first.
    pub fn alloc_user_huge(&mut self) -> Result<u64, AllocError> {
        let r = self.user;
        let fits = |base: u64| (base..base + 512).all(|f| self.usable(f));
        let found = match r.dir {
            Direction::Up => {
                let mut b = (self.user_cursor + 511) & !511;
                let mut hit = None;
                while b + 512 <= r.hi {
                    if fits(b) {
                        hit = Some(b);
                        break;
                    }
                    b += 512;
                }
                hit
            }
            Direction::Down => {
                let mut hit = None;
                let mut b = self.user_cursor.saturating_sub(512) & !511;
                while b >= r.lo {
                    if fits(b) {
                        hit = Some(b);
                        break;
                    }
                    if b < 512 {
                        break;
                    }
                    b -= 512;
                }
                hit
            }
        };
        let base = found.ok_or(AllocError::OutOfMemory)?;
        for f in base..base + 512 {
            self.kinds[f as usize] = FrameKind::User;
        }
        match r.dir {
            Direction::Up => self.user_cursor = base + 512,
            Direction::Down => self.user_cursor = base,
        }
        Ok(base)
    }

    /// Claim a specific frame, used by harness code to pin experiments.
    pub fn claim(&mut self, frame: u64, kind: FrameKind) -> Result<(), AllocError> {
        if self.kind(frame) != FrameKind::Free {
            return Err(AllocError::OutOfMemory);
        }
        self.kinds[frame as usize] = kind;
        Ok(())
    }

    /// Mark clustered runs of the table region as taken by other tenants,
    /// covering roughly `fraction` of it with runs of 1..=`max_run` frames.
    pub fn fragment_tables(&mut self, rng: &mut impl Rng, fraction: f64, max_run: u64) {
        if fraction <= 0.0 {
            return;
        }
        let r = self.table;
        let mean_run = (1 + max_run) as f64 / 2.0;
        let p_start = (fraction / mean_run).min(1.0);
        let mut f = r.lo;
        while f < r.hi {
            if rng.gen_bool(p_start) {
                let run = rng.gen_range(1..=max_run);
                for g in f..(f + run).min(r.hi) {
                    if self.kinds[g as usize] == FrameKind::Free {
                        self.kinds[g as usize] = FrameKind::Occupied;
                    }
                }
                f += run;
            }
            f += 1;
        }
    }

    pub fn count(&self, kind: FrameKind) -> usize {
        self.kinds.iter().filter(|&&k| k == kind).count()
    }

    pub fn frames_of(&self, kind: FrameKind) -> impl Iterator<Item = u64> + '_ {
        self.kinds
            .iter()
            .enumerate()
            .filter(move |(_, &k)| k == kind)
            .map(|(i, _)| i as u64)
    }
}
