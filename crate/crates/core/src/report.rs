use serde::{Deserialize, Serialize};

/// One named, checkable claim with the number that decided it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    /// The statement being checked, in words.
    pub anchor: String,
    pub pass: bool,
    pub measured: f64,
    /// Threshold or band the measurement was compared against.
    pub tolerance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Verdict {
    pub fn at_most(name: &str, anchor: &str, measured: f64, limit: f64) -> Verdict {
        Verdict {
            name: name.into(),
            anchor: anchor.into(),
            pass: measured <= limit,
            measured,
            tolerance: format!("<= {limit:e}"),
            detail: None,
        }
    }

    pub fn at_least(name: &str, anchor: &str, measured: f64, limit: f64) -> Verdict {
        Verdict {
            name: name.into(),
            anchor: anchor.into(),
            pass: measured >= limit,
            measured,
            tolerance: format!(">= {limit:e}"),
            detail: None,
        }
    }

    pub fn within(name: &str, anchor: &str, measured: f64, lo: f64, hi: f64) -> Verdict {
        Verdict {
            name: name.into(),
            anchor: anchor.into(),
            pass: measured >= lo && measured <= hi,
            measured,
            tolerance: format!("in [{lo}, {hi}]"),
            detail: None,
        }
    }

    pub fn equals(name: &str, anchor: &str, measured: f64, expected: f64) -> Verdict {
        Verdict {
            name: name.into(),
            anchor: anchor.into(),
            pass: measured == expected,
            measured,
            tolerance: format!("== {expected}"),
            detail: None,
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Verdict {
        self.detail = Some(detail.into());
        self
    }
}

pub fn all_pass(verdicts: &[Verdict]) -> bool {
    verdicts.iter().all(|v| v.pass)
}
