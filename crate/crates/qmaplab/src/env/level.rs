use std::fmt;

use thiserror::Error;

/// The six primitive actions, with stable integer codes 0-5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Action {
    Noop = 0,
    Left = 1,
    Right = 2,
    Jump = 3,
    JumpLeft = 4,
    JumpRight = 5,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::Noop,
        Action::Left,
        Action::Right,
        Action::Jump,
        Action::JumpLeft,
        Action::JumpRight,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Action> {
        Action::ALL.get(code).copied()
    }

    /// Horizontal intent: -1, 0 or +1 columns.
    pub fn dx(self) -> i32 {
        match self {
            Action::Left | Action::JumpLeft => -1,
            Action::Right | Action::JumpRight => 1,
            _ => 0,
        }
    }

    pub fn is_jump(self) -> bool {
        matches!(self, Action::Jump | Action::JumpLeft | Action::JumpRight)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    Empty,
    Wall,
    Hazard,
    Coin,
    Flag,
}

impl CellKind {
    fn to_char(self) -> char {
        match self {
            CellKind::Empty => '.',
            CellKind::Wall => '#',
            CellKind::Hazard => 'x',
            CellKind::Coin => 'o',
            CellKind::Flag => 'F',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Flat,
    Platformer,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Flat => write!(f, "flat"),
            Mode::Platformer => write!(f, "platformer"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LevelError {
    #[error("missing header line (expected `mode=<flat|platformer> cap=<int> view=<W>x<H>`)")]
    MissingHeader,
    #[error("bad header field `{0}`")]
    BadHeader(String),
    #[error("line {line}, column {col}: unknown cell character {ch:?}")]
    BadChar { line: usize, col: usize, ch: char },
    #[error("line {line}: row has {got} cells, expected {expected}")]
    RaggedRow { line: usize, expected: usize, got: usize },
    #[error("level has no start cell 'S'")]
    NoStart,
    #[error("line {line}, column {col}: duplicate start cell")]
    DuplicateStart { line: usize, col: usize },
    #[error("grid is empty")]
    EmptyGrid,
    #[error("episode cap must be at least 1")]
    ZeroCap,
    #[error("viewport {vw}x{vh} exceeds level {w}x{h}")]
    ViewportTooLarge { vw: usize, vh: usize, w: usize, h: usize },
}

/// A parsed level: rectangular cell grid plus episode/viewport settings from
/// the header line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Level {
    pub width: usize,
    pub height: usize,
    cells: Vec<CellKind>,
    /// (col, row) of the unique start cell.
    pub start: (usize, usize),
    pub mode: Mode,
    pub episode_cap: u32,
    pub viewport_w: usize,
    pub viewport_h: usize,
}

impl Level {
    /// Parses the ASCII format: header line, then one row of cells per line.
    pub fn parse(text: &str) -> Result<Level, LevelError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(LevelError::MissingHeader)?;
        let (mode, episode_cap, viewport_w, viewport_h) = parse_header(header)?;

        let mut cells = Vec::new();
        let mut width = None;
        let mut height = 0usize;
        let mut start = None;
        for (line_idx, line) in lines {
            let line_no = line_idx + 1;
            let row: Vec<char> = line.trim_end().chars().collect();
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(LevelError::RaggedRow { line: line_no, expected: w, got: row.len() })
                }
                _ => {}
            }
            for (col, ch) in row.iter().enumerate() {
                let kind = match ch {
                    '.' => CellKind::Empty,
                    '#' => CellKind::Wall,
                    'x' => CellKind::Hazard,
                    'o' => CellKind::Coin,
                    'F' => CellKind::Flag,
                    'S' => {
                        if start.is_some() {
                            return Err(LevelError::DuplicateStart { line: line_no, col: col + 1 });
                        }
                        start = Some((col, height));
                        CellKind::Empty
                    }
                    ch => return Err(LevelError::BadChar { line: line_no, col: col + 1, ch: *ch }),
                };
                cells.push(kind);
            }
            height += 1;
        }

        let width = width.ok_or(LevelError::EmptyGrid)?;
        if width == 0 || height == 0 {
            return Err(LevelError::EmptyGrid);
        }
        let start = start.ok_or(LevelError::NoStart)?;
        if episode_cap == 0 {
            return Err(LevelError::ZeroCap);
        }
        if viewport_w > width || viewport_h > height {
            return Err(LevelError::ViewportTooLarge {
                vw: viewport_w,
                vh: viewport_h,
                w: width,
                h: height,
            });
        }
        Ok(Level {
            width,
            height,
            cells,
            start,
            mode,
            episode_cap,
            viewport_w,
            viewport_h,
        })
    }

    /// Inverse of `parse`; `parse(to_text(level)) == level`.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "mode={} cap={} view={}x{}\n",
            self.mode, self.episode_cap, self.viewport_w, self.viewport_h
        );
        for row in 0..self.height {
            for col in 0..self.width {
                if (col, row) == self.start {
                    out.push('S');
                } else {
                    out.push(self.cell(col, row).to_char());
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn cell(&self, col: usize, row: usize) -> CellKind {
        self.cells[row * self.width + col]
    }

    pub fn max_scroll(&self) -> usize {
        self.width - self.viewport_w
    }

    /// Top row of the (bottom-pinned) viewport window.
    pub fn viewport_row_offset(&self) -> usize {
        self.height - self.viewport_h
    }
}

fn parse_header(header: &str) -> Result<(Mode, u32, usize, usize), LevelError> {
    let mut mode = None;
    let mut cap = None;
    let mut view = None;
    for field in header.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| LevelError::BadHeader(field.to_string()))?;
        match key {
            "mode" => {
                mode = Some(match value {
                    "flat" => Mode::Flat,
                    "platformer" => Mode::Platformer,
                    _ => return Err(LevelError::BadHeader(field.to_string())),
                })
            }
            "cap" => {
                cap = Some(
                    value
                        .parse::<u32>()
                        .map_err(|_| LevelError::BadHeader(field.to_string()))?,
                )
            }
            "view" => {
                let (w, h) = value
                    .split_once('x')
                    .ok_or_else(|| LevelError::BadHeader(field.to_string()))?;
                let w = w.parse::<usize>().map_err(|_| LevelError::BadHeader(field.to_string()))?;
                let h = h.parse::<usize>().map_err(|_| LevelError::BadHeader(field.to_string()))?;
                view = Some((w, h));
            }
            _ => return Err(LevelError::BadHeader(field.to_string())),
        }
    }
    let mode = mode.ok_or_else(|| LevelError::BadHeader("mode".into()))?;
    let cap = cap.ok_or_else(|| LevelError::BadHeader("cap".into()))?;
    let (vw, vh) = view.ok_or_else(|| LevelError::BadHeader("view".into()))?;
    Ok((mode, cap, vw, vh))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_grid() {
        let level = Level::parse("mode=flat cap=10 view=3x3\n...\n.S.\n...\n").unwrap();
        assert_eq!(level.width, 3);
        assert_eq!(level.height, 3);
        assert_eq!(level.start, (1, 1));
        assert_eq!(level.cell(1, 1), CellKind::Empty);
    }

    #[test]
    fn rejects_unknown_char_with_position() {
        let err = Level::parse("mode=flat cap=10 view=3x2\n...\n.Z.\nS..\n").unwrap_err();
        assert_eq!(err, LevelError::BadChar { line: 3, col: 2, ch: 'Z' });
    }

    #[test]
    fn rejects_duplicate_and_missing_start() {
        let err = Level::parse("mode=flat cap=10 view=2x2\nSS\n..\n").unwrap_err();
        assert!(matches!(err, LevelError::DuplicateStart { .. }));
        let err = Level::parse("mode=flat cap=10 view=2x2\n..\n..\n").unwrap_err();
        assert_eq!(err, LevelError::NoStart);
    }

    #[test]
    fn rejects_ragged_rows() {
        let err = Level::parse("mode=flat cap=10 view=2x2\n...\n..\n").unwrap_err();
        assert!(matches!(err, LevelError::RaggedRow { line: 3, expected: 3, got: 2 }));
    }

    #[test]
    fn round_trips_through_text() {
        let text = "mode=platformer cap=2394 view=4x3\n####\n#S.o\n..xF\n####\n";
        let level = Level::parse(text).unwrap();
        let echoed = level.to_text();
        assert_eq!(Level::parse(&echoed).unwrap(), level);
        assert_eq!(echoed, text.replace("####\n#S.o\n..xF\n####", "####\n#S.o\n..xF\n####"));
    }

    #[test]
    fn viewport_must_fit() {
        let err = Level::parse("mode=flat cap=10 view=5x2\nS..\n...\n").unwrap_err();
        assert!(matches!(err, LevelError::ViewportTooLarge { .. }));
    }
}
