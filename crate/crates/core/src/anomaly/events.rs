use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    #[default]
    Unreviewed,
    Confirmed,
    Dismissed,
}

impl std::str::FromStr for Verdict {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unreviewed" => Ok(Verdict::Unreviewed),
            "confirmed" | "confirm" => Ok(Verdict::Confirmed),
            "dismissed" | "dismiss" => Ok(Verdict::Dismissed),
            other => Err(crate::Error::InvalidInput(format!("unknown verdict {other:?}"))),
        }
    }
}

/// A flagged clip, frames `start..=end`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    pub start: u64,
    pub end: u64,
    /// Largest raw distance inside the clip.
    pub peak: u32,
    /// Anchor frame in effect when the clip started.
    pub anchor: u64,
    #[serde(default)]
    pub verdict: Verdict,
}

impl AnomalyEvent {
    pub fn len(&self) -> u64 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, frame: u64) -> bool {
        (self.start..=self.end).contains(&frame)
    }
}

/// Group per-frame flags into clips: maximal flagged runs, joined when at
/// most `gap` unflagged frames separate them, then dropped if shorter than
/// `min_len` frames. `raw` supplies the peak distance and `anchor_of` the
/// anchor in effect at each frame.
pub fn merge_events(
    flags: &[bool],
    raw: &[u32],
    anchor_of: &dyn Fn(u64) -> u64,
    gap: usize,
    min_len: usize,
) -> Vec<AnomalyEvent> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < flags.len() {
        if !flags[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < flags.len() && flags[i] {
            i += 1;
        }
        let end = i - 1;
        match runs.last_mut() {
            Some(last) if start - last.1 - 1 <= gap => last.1 = end,
            _ => runs.push((start, end)),
        }
    }
    runs.into_iter()
        .filter(|(s, e)| e - s + 1 >= min_len)
        .map(|(s, e)| AnomalyEvent {
            start: s as u64,
            end: e as u64,
            peak: raw.get(s..=e).and_then(|r| r.iter().max().copied()).unwrap_or(0),
            anchor: anchor_of(s as u64),
            verdict: Verdict::Unreviewed,
        })
        .collect()
}
