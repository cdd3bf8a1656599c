use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// (row, col); row grows southward, col grows eastward.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub row: i32,
    pub col: i32,
}

impl Pos {
    pub const fn new(row: i32, col: i32) -> Self {
        Pos { row, col }
    }

    pub fn step(self, facing: Facing) -> Pos {
        let (dr, dc) = facing.offset();
        Pos::new(self.row + dr, self.col + dc)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Facing {
    East,
    South,
    West,
    North,
}

impl Facing {
    pub const ALL: [Facing; 4] = [Facing::East, Facing::South, Facing::West, Facing::North];

    pub fn offset(self) -> (i32, i32) {
        match self {
            Facing::East => (0, 1),
            Facing::South => (1, 0),
            Facing::West => (0, -1),
            Facing::North => (-1, 0),
        }
    }

    pub fn left(self) -> Facing {
        Facing::ALL[(self as usize + 3) % 4]
    }

    pub fn right(self) -> Facing {
        Facing::ALL[(self as usize + 1) % 4]
    }

    pub fn name(self) -> &'static str {
        match self {
            Facing::East => "East",
            Facing::South => "South",
            Facing::West => "West",
            Facing::North => "North",
        }
    }

    fn glyph(self) -> char {
        match self {
            Facing::East => '>',
            Facing::South => 'v',
            Facing::West => '<',
            Facing::North => '^',
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KeyColor {
    Yellow,
    Blue,
}

impl KeyColor {
    pub fn item_name(self) -> &'static str {
        match self {
            KeyColor::Yellow => "YellowKey",
            KeyColor::Blue => "BlueKey",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DoorState {
    Locked,
    Closed,
    Open,
}

/// Static cell content. Keys and the agent are dynamic and tracked by the
/// environment; a door tile's state lives there too.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tile {
    Floor,
    Wall,
    Lava,
    Goal,
    Door,
}

/// Fixed grid layout with its initial dynamic objects.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LayoutRepr")]
pub struct Layout {
    pub width: i32,
    pub height: i32,
    /// ASCII rows: `#` wall, `.` floor, `L` lava, `G` goal, `D` locked door,
    /// `Y`/`B` yellow/blue key on floor.
    pub rows: Vec<String>,
    /// Candidate start poses, one drawn per episode.
    pub starts: Vec<(Pos, Facing)>,
    #[serde(skip)]
    tiles: Vec<Tile>,
    #[serde(skip)]
    pub(crate) keys: Vec<(KeyColor, Pos)>,
    #[serde(skip)]
    pub(crate) door: Option<Pos>,
    #[serde(skip)]
    pub(crate) goal: Pos,
}

#[derive(Deserialize)]
struct LayoutRepr {
    rows: Vec<String>,
    starts: Vec<(Pos, Facing)>,
}

impl TryFrom<LayoutRepr> for Layout {
    type Error = Error;
    fn try_from(r: LayoutRepr) -> Result<Self> {
        let rows: Vec<&str> = r.rows.iter().map(String::as_str).collect();
        Layout::parse(&rows, &r.starts)
    }
}

impl Layout {
    pub fn parse(rows: &[&str], starts: &[(Pos, Facing)]) -> Result<Self> {
        let height = rows.len() as i32;
        let width = rows.first().map_or(0, |r| r.chars().count()) as i32;
        if height == 0 || width == 0 {
            return Err(Error::Config("empty layout".into()));
        }
        let mut tiles = Vec::with_capacity((width * height) as usize);
        let mut keys = Vec::new();
        let mut door = None;
        let mut goal = None;
        for (r, row) in rows.iter().enumerate() {
            if row.chars().count() as i32 != width {
                return Err(Error::Config(format!("layout row {r} has the wrong width")));
            }
            for (c, ch) in row.chars().enumerate() {
                let here = Pos::new(r as i32, c as i32);
                let tile = match ch {
                    '#' => Tile::Wall,
                    '.' | ' ' => Tile::Floor,
                    'L' => Tile::Lava,
                    'G' => {
                        if goal.replace(here).is_some() {
                            return Err(Error::Config("layout has more than one goal".into()));
                        }
                        Tile::Goal
                    }
                    'D' => {
                        if door.replace(here).is_some() {
                            return Err(Error::Config("layout has more than one door".into()));
                        }
                        Tile::Door
                    }
                    'Y' | 'B' => {
                        let color = if ch == 'Y' { KeyColor::Yellow } else { KeyColor::Blue };
                        if keys.iter().any(|(k, _)| *k == color) {
                            return Err(Error::Config(format!("duplicate {color:?} key")));
                        }
                        keys.push((color, here));
                        Tile::Floor
                    }
                    other => return Err(Error::Config(format!("unknown layout glyph `{other}`"))),
                };
                tiles.push(tile);
            }
        }
        keys.sort();
        let goal = goal.ok_or_else(|| Error::Config("layout has no goal".into()))?;
        if starts.is_empty() {
            return Err(Error::Config("layout has no start pose".into()));
        }
        let layout = Layout {
            width,
            height,
            rows: rows.iter().map(|r| r.to_string()).collect(),
            starts: starts.to_vec(),
            tiles,
            keys,
            door,
            goal,
        };
        for (p, _) in starts {
            if layout.tile(*p) != Tile::Floor || layout.keys.iter().any(|(_, k)| k == p) {
                return Err(Error::Config(format!("start {p:?} is not free floor")));
            }
        }
        Ok(layout)
    }

    /// Tile at `p`; anything off-grid reads as wall.
    #[inline]
    pub fn tile(&self, p: Pos) -> Tile {
        if p.row < 0 || p.col < 0 || p.row >= self.height || p.col >= self.width {
            return Tile::Wall;
        }
        self.tiles[(p.row * self.width + p.col) as usize]
    }

    pub fn goal(&self) -> Pos {
        self.goal
    }

    pub fn door(&self) -> Option<Pos> {
        self.door
    }

    pub fn key_colors(&self) -> Vec<KeyColor> {
        self.keys.iter().map(|(c, _)| *c).collect()
    }

    pub fn has_lava(&self) -> bool {
        self.tiles.contains(&Tile::Lava)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Named environments with embedded layouts.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    DoorKey,
    LavaShortcutMaze,
    Empty,
}

impl EnvName {
    pub fn cli_name(self) -> &'static str {
        match self {
            EnvName::DoorKey => "doorkey",
            EnvName::LavaShortcutMaze => "lavamaze",
            EnvName::Empty => "empty",
        }
    }

    pub fn layout(self) -> Layout {
        match self {
            EnvName::DoorKey => Layout::parse(
                &[
                    "########", "########", "########", "##Y.D.G#", "##B.#..#", "########", "########", "########",
                ],
                &[
                    (Pos::new(3, 3), Facing::East),
                    (Pos::new(3, 3), Facing::South),
                    (Pos::new(4, 3), Facing::North),
                    (Pos::new(4, 3), Facing::West),
                ],
            ),
            EnvName::LavaShortcutMaze => Layout::parse(
                &[
                    "########", "#...LLG#", "#.####.#", "#......#", "########", "########", "########", "########",
                ],
                &[(Pos::new(1, 1), Facing::East), (Pos::new(1, 1), Facing::South)],
            ),
            EnvName::Empty => Layout::parse(
                &[
                    "########", "#......#", "#......#", "#......#", "#......#", "#......#", "#.....G#", "########",
                ],
                &[(Pos::new(1, 1), Facing::East)],
            ),
        }
        .expect("embedded layouts are valid")
    }
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for EnvName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "doorkey" => Ok(EnvName::DoorKey),
            "lavamaze" | "lavashortcutmaze" => Ok(EnvName::LavaShortcutMaze),
            "empty" => Ok(EnvName::Empty),
            other => Err(Error::Config(format!("unknown environment `{other}`"))),
        }
    }
}

pub(crate) fn agent_glyph(f: Facing) -> char {
    f.glyph()
}
