//! Timestamps for skill ids, snapshots and run directories.

use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

/// Wall clock, or a fixed instant for reproducible runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Clock {
    System,
    Fixed(String),
}

impl Clock {
    /// RFC 3339 UTC timestamp with second precision.
    pub fn now(&self) -> String {
        match self {
            Clock::System => {
                let now = OffsetDateTime::now_utc().replace_nanosecond(0).expect("zero is a valid nanosecond");
                now.format(&Rfc3339).expect("RFC 3339 formatting")
            }
            Clock::Fixed(ts) => ts.clone(),
        }
    }

    /// `now()` reduced to characters safe in file names, e.g. `20261019T120000Z`.
    pub fn compact(&self) -> String {
        self.now().chars().filter(|c| c.is_ascii_alphanumeric()).collect()
    }
}
