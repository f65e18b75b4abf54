//! List notation for per-epoch settings: `[0.05]*25 + [0.052]*25 + …`.
//!
//! ```text
//! LIST := TERM ("+" TERM)*
//! TERM := "[" number "]" "*" count
//! ```

use crate::error::{Error, Result};

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        while let Some(c) = self.text[self.pos..].chars().next() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            pos: self.pos,
            msg: msg.into(),
        }
    }

    fn expect(&mut self, ch: char) -> Result<()> {
        self.skip_ws();
        match self.text[self.pos..].chars().next() {
            Some(c) if c == ch => {
                self.pos += c.len_utf8();
                Ok(())
            }
            Some(c) => Err(self.err(format!("expected '{ch}', found '{c}'"))),
            None => Err(self.err(format!("expected '{ch}', found end of input"))),
        }
    }

    fn token(&mut self, allowed: impl Fn(char) -> bool) -> (usize, &'a str) {
        self.skip_ws();
        let start = self.pos;
        let len = self.text[start..]
            .char_indices()
            .find(|&(_, c)| !allowed(c))
            .map_or(self.text.len() - start, |(i, _)| i);
        self.pos += len;
        (start, &self.text[start..start + len])
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos == self.text.len()
    }
}

/// Expand a schedule string into one value per epoch.
pub fn parse_schedule(text: &str) -> Result<Vec<f64>> {
    let mut cur = Cursor { text, pos: 0 };
    let mut out = Vec::new();
    loop {
        cur.expect('[')?;
        let (at, num) = cur.token(|c| c.is_ascii_digit() || "+-.eE".contains(c));
        let value: f64 = num.parse().map_err(|_| Error::Parse {
            pos: at,
            msg: format!("bad number {num:?}"),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                pos: at,
                msg: "value must be finite".into(),
            });
        }
        cur.expect(']')?;
        cur.expect('*')?;
        let (at, count) = cur.token(|c| c.is_ascii_digit() || c == '-');
        let count: i64 = count.parse().map_err(|_| Error::Parse {
            pos: at,
            msg: format!("bad count {count:?}"),
        })?;
        if count <= 0 {
            return Err(Error::Parse {
                pos: at,
                msg: format!("count must be positive, got {count}"),
            });
        }
        out.extend(std::iter::repeat_n(value, count as usize));
        if cur.at_end() {
            return Ok(out);
        }
        cur.expect('+')?;
    }
}

/// Like [`parse_schedule`] but every value must be a positive integer.
pub fn parse_index_schedule(text: &str) -> Result<Vec<usize>> {
    parse_schedule(text)?
        .into_iter()
        .map(|v| {
            if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(Error::config(format!("schedule value {v} is not a positive integer")))
            }
        })
        .collect()
}

/// Per-epoch training settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSchedule {
    /// Last integration time index per epoch.
    pub tau: Vec<usize>,
    pub lr: Vec<f64>,
    /// Optional rollout depth per epoch; overrides `tau` when present.
    pub depth: Option<Vec<usize>>,
}

impl TrainSchedule {
    pub fn new(tau: Vec<usize>, lr: Vec<f64>, depth: Option<Vec<usize>>) -> Result<Self> {
        let n = lr.len();
        if tau.len() != n || depth.as_ref().is_some_and(|d| d.len() != n) {
            return Err(Error::config(format!(
                "schedule lengths differ: tau {}, lr {}, depth {}",
                tau.len(),
                n,
                depth.as_ref().map_or("-".to_string(), |d| d.len().to_string())
            )));
        }
        if tau.iter().chain(depth.iter().flatten()).any(|&t| t == 0) {
            return Err(Error::config("integration indices must be at least 1"));
        }
        if lr.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::config("learning rates must be finite and non-negative"));
        }
        Ok(TrainSchedule { tau, lr, depth })
    }

    /// Build from list-notation strings.
    pub fn parse(tau: &str, lr: &str, depth: Option<&str>) -> Result<Self> {
        TrainSchedule::new(
            parse_index_schedule(tau)?,
            parse_schedule(lr)?,
            depth.map(parse_index_schedule).transpose()?,
        )
    }

    /// Constant `tau` for as many epochs as the learning-rate list.
    pub fn constant_tau(tau: usize, lr: &str) -> Result<Self> {
        let lr = parse_schedule(lr)?;
        TrainSchedule::new(vec![tau; lr.len()], lr, None)
    }

    pub fn epochs(&self) -> usize {
        self.lr.len()
    }

    /// Rollout length used in `epoch`.
    pub fn steps(&self, epoch: usize) -> usize {
        match &self.depth {
            Some(d) => d[epoch],
            None => self.tau[epoch],
        }
    }

    pub fn max_steps(&self) -> usize {
        (0..self.epochs()).map(|e| self.steps(e)).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_list() {
        let v = parse_schedule("[0.07]*201").unwrap();
        assert_eq!(v.len(), 201);
        assert!(v.iter().all(|&x| x == 0.07));
    }

    #[test]
    fn piecewise_list_keeps_order() {
        let v = parse_schedule("[0.05]*25 + [0.052]*25 + [0.054]*50 + [0.056]*301").unwrap();
        assert_eq!(v.len(), 401);
        assert_eq!((v[24], v[25], v[50], v[100], v[400]), (0.05, 0.052, 0.054, 0.056, 0.056));
    }

    #[test]
    fn depth_list() {
        let d = parse_index_schedule("[2] * 200 + [3] * 300 + [4] * 201").unwrap();
        assert_eq!(d.len(), 701);
        assert_eq!((d[199], d[200], d[499], d[500]), (2, 3, 3, 4));
        assert!(parse_index_schedule("[2.5]*3").is_err());
        assert_eq!(parse_index_schedule("[2]*3+[4]*1").unwrap(), vec![2, 2, 2, 4]);
    }

    #[test]
    fn errors_carry_positions() {
        let cases = [
            ("[0.07]*0", 7),
            ("[0.07]*-3", 7),
            ("[0.07*3", 5),
            ("0.07*3", 0),
            ("[0.07]*3 +", 10),
            ("[0.07]*3 [1]*2", 9),
            ("[abc]*3", 1),
            ("[0.07]*x", 7),
        ];
        for (text, pos) in cases {
            match parse_schedule(text) {
                Err(Error::Parse { pos: p, .. }) => assert_eq!(p, pos, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn schedule_lengths_must_agree() {
        assert!(TrainSchedule::parse("[4]*10", "[0.1]*9", None).is_err());
        assert!(TrainSchedule::parse("[4]*10", "[0.1]*10", Some("[2]*5")).is_err());
        let s = TrainSchedule::parse("[4]*10", "[0.1]*10", Some("[2]*4 + [3]*6")).unwrap();
        assert_eq!((s.steps(0), s.steps(9), s.max_steps()), (2, 3, 3));
        assert!(TrainSchedule::parse("[0]*2", "[0.1]*2", None).is_err());
    }
}
