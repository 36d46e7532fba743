//! Per-run summary counters.

use std::fmt;

use crate::os::SanitizeMode;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub scenario: String,
    pub exit_code: i32,
    pub policy: SanitizeMode,
    /// Bus accesses denied by any unit.
    pub denials: u64,
    /// Distinct pool words the adversary read that held neither background
    /// nor the sanitize fill.
    pub residue_words_disclosed: u64,
    pub sanitize_cycles: u64,
    pub sanitized_words: u64,
    pub profiles_matched: u64,
}

impl Report {
    fn fields(&self) -> [(&'static str, String); 8] {
        [
            ("scenario", self.scenario.clone()),
            ("exit_code", self.exit_code.to_string()),
            ("policy", self.policy.to_string()),
            ("denials", self.denials.to_string()),
            ("residue_words_disclosed", self.residue_words_disclosed.to_string()),
            ("sanitize_cycles", self.sanitize_cycles.to_string()),
            ("sanitized_words", self.sanitized_words.to_string()),
            ("profiles_matched", self.profiles_matched.to_string()),
        ]
    }

    /// `key=value`, one per line.
    pub fn to_structured(&self) -> String {
        self.fields().iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Inverse of [`Report::to_structured`].
    pub fn parse_structured(text: &str) -> Option<Report> {
        let get = |key: &str| {
            text.lines()
                .find_map(|l| l.strip_prefix(key)?.strip_prefix('='))
                .map(str::to_string)
        };
        Some(Report {
            scenario: get("scenario")?,
            exit_code: get("exit_code")?.parse().ok()?,
            policy: get("policy")?.parse().ok()?,
            denials: get("denials")?.parse().ok()?,
            residue_words_disclosed: get("residue_words_disclosed")?.parse().ok()?,
            sanitize_cycles: get("sanitize_cycles")?.parse().ok()?,
            sanitized_words: get("sanitized_words")?.parse().ok()?,
            profiles_matched: get("profiles_matched")?.parse().ok()?,
        })
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.fields() {
            writeln!(f, "{:<24} {v}", format!("{k}:"))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structured_round_trip() {
        let r = Report {
            scenario: "pipeline".into(),
            exit_code: 0,
            policy: SanitizeMode::OnTerminate,
            denials: 3,
            residue_words_disclosed: 0,
            sanitize_cycles: 262_144,
            sanitized_words: 262_144,
            profiles_matched: 0,
        };
        assert_eq!(Report::parse_structured(&r.to_structured()), Some(r));
    }
}
