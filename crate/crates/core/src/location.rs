//! Text-to-grid location mapping.
//!
//! Descriptions are mapped onto a k×k grid with row-major cell indices and
//! origin at the top-left. Vertical keywords pick the row band, horizontal
//! keywords the column band; `center`/`middle` fill whichever axis the
//! description leaves open. An axis left unnamed defaults to the center band,
//! which only exists for odd k.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::ConfigError;

pub const MAX_GRID: u32 = 8;
pub const DEFAULT_GRID: u32 = 3;

/// A k×k grid, `1 <= k <= 8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct GridSpec {
    k: u32,
}

impl GridSpec {
    pub fn new(k: u32) -> Result<Self, ConfigError> {
        if (1..=MAX_GRID).contains(&k) {
            Ok(GridSpec { k })
        } else {
            Err(ConfigError::GridSize(k))
        }
    }

    pub fn k(self) -> u32 {
        self.k
    }

    pub fn cells(self) -> u32 {
        self.k * self.k
    }

    pub fn cell(self, row: u32, col: u32) -> u32 {
        row * self.k + col
    }

    pub fn row_col(self, cell: u32) -> (u32, u32) {
        (cell / self.k, cell % self.k)
    }

    fn center(self) -> Option<u32> {
        (self.k % 2 == 1).then_some(self.k / 2)
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { k: DEFAULT_GRID }
    }
}

impl TryFrom<u32> for GridSpec {
    type Error = ConfigError;

    fn try_from(k: u32) -> Result<Self, Self::Error> {
        GridSpec::new(k)
    }
}

impl From<GridSpec> for u32 {
    fn from(g: GridSpec) -> u32 {
        g.k
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.k, self.k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Band {
    Low,
    Mid,
    High,
}

#[derive(Debug, Default)]
struct Keywords {
    vertical: Option<Band>,
    horizontal: Option<Band>,
    center: bool,
    conflict: bool,
}

impl Keywords {
    fn set(slot: &mut Option<Band>, band: Band, conflict: &mut bool) {
        match slot {
            Some(b) if *b != band => *conflict = true,
            _ => *slot = Some(band),
        }
    }

    fn scan(description: &str) -> Self {
        let mut kw = Keywords::default();
        let lower = description.to_lowercase();
        for word in lower.split(|c: char| !c.is_alphanumeric()) {
            match word {
                "top" | "upper" => Self::set(&mut kw.vertical, Band::Low, &mut kw.conflict),
                "bottom" | "lower" => Self::set(&mut kw.vertical, Band::High, &mut kw.conflict),
                "left" => Self::set(&mut kw.horizontal, Band::Low, &mut kw.conflict),
                "right" => Self::set(&mut kw.horizontal, Band::High, &mut kw.conflict),
                "center" | "centre" | "middle" | "central" => kw.center = true,
                _ => {}
            }
        }
        kw
    }
}

/// Row/column bands named by a description, before they are placed on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocationBands {
    vertical: Band,
    horizontal: Band,
}

impl LocationBands {
    /// Resolves the keywords in `description`; `None` when there are none or
    /// they contradict each other (e.g. both `top` and `bottom`).
    pub fn from_description(description: &str) -> Option<Self> {
        let kw = Keywords::scan(description);
        if kw.conflict {
            return None;
        }
        if kw.vertical.is_none() && kw.horizontal.is_none() && !kw.center {
            return None;
        }
        Some(LocationBands {
            vertical: kw.vertical.unwrap_or(Band::Mid),
            horizontal: kw.horizontal.unwrap_or(Band::Mid),
        })
    }

    pub fn place(self, grid: GridSpec) -> Option<u32> {
        let index = |band: Band| match band {
            Band::Low => Some(0),
            Band::High => Some(grid.k - 1),
            Band::Mid => grid.center(),
        };
        Some(grid.cell(index(self.vertical)?, index(self.horizontal)?))
    }
}

/// Maps a location description onto a grid cell, or `None` if it does not
/// resolve.
pub fn map_location(description: &str, grid: GridSpec) -> Option<u32> {
    LocationBands::from_description(description)?.place(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(k: u32) -> GridSpec {
        GridSpec::new(k).unwrap()
    }

    #[test]
    fn three_by_three_examples() {
        assert_eq!(map_location("bottom left", g(3)), Some(6));
        assert_eq!(map_location("center", g(3)), Some(4));
        assert_eq!(map_location("top right", g(3)), Some(2));
        assert_eq!(map_location("the defect", g(3)), None);
        assert_eq!(map_location("lower left corner", g(3)), Some(6));
    }

    #[test]
    fn every_three_by_three_cell_reachable() {
        let phrases = [
            ("top left", 0),
            ("top", 1),
            ("upper right", 2),
            ("left", 3),
            ("middle", 4),
            ("right side", 5),
            ("Bottom-Left", 6),
            ("bottom center", 7),
            ("lower right", 8),
            ("center left", 3),
            ("middle of the top edge", 1),
        ];
        for (p, cell) in phrases {
            assert_eq!(map_location(p, g(3)), Some(cell), "{p}");
        }
    }

    #[test]
    fn contradictions_are_unresolved() {
        assert_eq!(map_location("top bottom", g(3)), None);
        assert_eq!(map_location("left and right", g(3)), None);
    }

    #[test]
    fn even_grid_has_no_center_band() {
        assert_eq!(map_location("left", g(2)), None);
        assert_eq!(map_location("center", g(4)), None);
        assert_eq!(map_location("top center", g(4)), None);
        assert_eq!(map_location("bottom right", g(4)), Some(15));
        assert_eq!(map_location("top right", g(2)), Some(1));
    }

    #[test]
    fn single_cell_grid() {
        for p in ["top left", "center", "right", "lower right"] {
            assert_eq!(map_location(p, g(1)), Some(0));
        }
        assert_eq!(map_location("somewhere", g(1)), None);
    }

    #[test]
    fn grid_bounds() {
        assert!(GridSpec::new(0).is_err());
        assert!(GridSpec::new(9).is_err());
        assert_eq!(GridSpec::default().k(), 3);
        assert_eq!(g(5).row_col(13), (2, 3));
    }
}
