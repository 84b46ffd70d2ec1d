//! Run metrics and the binary coverage mask.

use crate::env::Action;
use crate::explore::ActionSource;

/// One metrics record; CSV columns follow field order exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub episode: u64,
    /// Return accumulated in the episode in progress (completed total on
    /// terminal rows).
    pub episode_return: f64,
    pub flags_reached_cumulative: u64,
    pub unique_cells_visited: usize,
    pub exploratory_proportion_ema: f64,
    pub p_goal: f64,
    pub qmap_loss: f64,
    pub dqn_loss: f64,
}

pub const METRICS_HEADER: &str = "step,episode,episode_return,flags_reached_cumulative,unique_cells_visited,exploratory_proportion_ema,p_goal,qmap_loss,dqn_loss";

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.step,
            r.episode,
            fmt_f64(r.episode_return),
            r.flags_reached_cumulative,
            r.unique_cells_visited,
            fmt_f64(r.exploratory_proportion_ema),
            fmt_f64(r.p_goal),
            fmt_f64(r.qmap_loss),
            fmt_f64(r.dqn_loss),
        ));
    }
    out
}

/// One action decision record for controller audits.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRow {
    pub step: u64,
    pub source: ActionSource,
    /// Emitted action (kept in memory for trace comparisons; not a CSV column).
    pub action: Action,
    pub goal_cell: Option<(usize, usize)>,
    pub budget: u32,
    pub p_goal: f64,
    pub ema: f64,
}

pub const DECISIONS_HEADER: &str = "step,source,goal_x,goal_y,budget,p_goal,ema";

pub fn decisions_to_csv(rows: &[DecisionRow]) -> String {
    let mut out = String::from(DECISIONS_HEADER);
    out.push('\n');
    for r in rows {
        let source = match r.source {
            ActionSource::Random => "random",
            ActionSource::Dqn => "dqn",
            ActionSource::QMap => "qmap",
        };
        let (gx, gy) = match r.goal_cell {
            Some((x, y)) => (x.to_string(), y.to_string()),
            None => (String::new(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.step,
            source,
            gx,
            gy,
            r.budget,
            fmt_f64(r.p_goal),
            fmt_f64(r.ema),
        ));
    }
    out
}

/// Binary world-coordinate coverage grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitationMask {
    pub w: usize,
    pub h: usize,
    cells: Vec<bool>,
    visited: usize,
    rightmost: usize,
    /// Steps accumulated into this mask.
    pub steps: u64,
}

impl VisitationMask {
    pub fn new(w: usize, h: usize) -> Self {
        Self { w, h, cells: vec![false; w * h], visited: 0, rightmost: 0, steps: 0 }
    }

    pub fn visit(&mut self, col: usize, row: usize) {
        self.steps += 1;
        let i = row * self.w + col;
        if !self.cells[i] {
            self.cells[i] = true;
            self.visited += 1;
            self.rightmost = self.rightmost.max(col);
        } else {
            self.rightmost = self.rightmost.max(col);
        }
    }

    pub fn visited_count(&self) -> usize {
        self.visited
    }

    pub fn rightmost_column(&self) -> usize {
        self.rightmost
    }

    pub fn is_visited(&self, col: usize, row: usize) -> bool {
        self.cells[row * self.w + col]
    }

    /// Plain-text portable graymap, visited cells white-on-black (255).
    pub fn to_pgm(&self) -> String {
        let mut out = format!("P2\n{} {}\n255\n", self.w, self.h);
        for row in 0..self.h {
            let line: Vec<&str> = (0..self.w)
                .map(|col| if self.cells[row * self.w + col] { "255" } else { "0" })
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_pgm(text: &str) -> Option<VisitationMask> {
        let mut tokens = text.split_ascii_whitespace();
        if tokens.next()? != "P2" {
            return None;
        }
        let w: usize = tokens.next()?.parse().ok()?;
        let h: usize = tokens.next()?.parse().ok()?;
        let _maxval: usize = tokens.next()?.parse().ok()?;
        let mut mask = VisitationMask::new(w, h);
        for row in 0..h {
            for col in 0..w {
                let v: usize = tokens.next()?.parse().ok()?;
                if v > 0 {
                    mask.cells[row * w + col] = true;
                    mask.visited += 1;
                    mask.rightmost = mask.rightmost.max(col);
                }
            }
        }
        Some(mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_counts_and_round_trips() {
        let mut m = VisitationMask::new(4, 2);
        m.visit(0, 0);
        m.visit(0, 0);
        m.visit(3, 1);
        assert_eq!(m.visited_count(), 2);
        assert_eq!(m.rightmost_column(), 3);
        assert_eq!(m.steps, 3);
        let pgm = m.to_pgm();
        let back = VisitationMask::from_pgm(&pgm).unwrap();
        assert_eq!(back.visited_count(), 2);
        assert!(back.is_visited(3, 1));
        assert_eq!(back.to_pgm(), pgm, "serialization is stable");
    }

    #[test]
    fn csv_headers_match_row_order_and_nan_is_lowercase() {
        let rows = vec![MetricsRow {
            step: 1,
            episode: 0,
            episode_return: 2.0,
            flags_reached_cumulative: 0,
            unique_cells_visited: 5,
            exploratory_proportion_ema: 1.0,
            p_goal: 0.5,
            qmap_loss: f64::NAN,
            dqn_loss: f64::NAN,
        }];
        let csv = metrics_to_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), METRICS_HEADER);
        assert_eq!(lines.next().unwrap(), "1,0,2,0,5,1,0.5,nan,nan");
    }
}
