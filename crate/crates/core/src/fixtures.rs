//! Scenario files shipped with the crate.

pub const ONBOARDING: &str = include_str!("../fixtures/onboarding.toml");
pub const TEMPLOOP: &str = include_str!("../fixtures/temploop.toml");
pub const TWO_METRIC: &str = include_str!("../fixtures/two_metric.toml");

/// `(file name, contents)` of every shipped fixture.
pub const ALL: [(&str, &str); 3] =
    [("onboarding.toml", ONBOARDING), ("temploop.toml", TEMPLOOP), ("two_metric.toml", TWO_METRIC)];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioConfig;

    #[test]
    fn every_fixture_validates() {
        for (name, text) in ALL {
            ScenarioConfig::from_toml_str(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }
}
