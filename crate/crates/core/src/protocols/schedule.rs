use std::fmt;
use std::str::FromStr;

/// Which online learner drives a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Protocol {
    /// Full-information projected OGD on each agent's weighted objective.
    Ogd,
    /// Consensus averaging plus a local gradient step.
    Cdogd,
    /// Weighted OGD on delayed gradients routed over Steiner trees.
    Damtogd,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Ogd, Protocol::Cdogd, Protocol::Damtogd];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Ogd => "ogd",
            Protocol::Cdogd => "cdogd",
            Protocol::Damtogd => "damtogd",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name() == s.trim())
            .ok_or_else(|| format!("unknown protocol {s:?} (expected ogd, cdogd or damtogd)"))
    }
}

/// Step-size schedule parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleParams {
    pub protocol: Protocol,
    /// Scale of the delayed schedule `c / √(t - τ_min)`.
    pub c: f64,
    /// Per-agent minimum round-trip delay over the agent's support.
    pub tau_min: Vec<usize>,
}

impl ScheduleParams {
    pub fn new(protocol: Protocol, c: f64, tau_min: Vec<usize>) -> Self {
        assert!(c > 0.0 && c.is_finite(), "schedule scale must be positive");
        ScheduleParams { protocol, c, tau_min }
    }
}

/// Learning rate at 1-based round `t`:
///
/// * `ogd`: `1/√t`
/// * `cdogd`: `1/(2√t)`
/// * `damtogd`: `c/√(t - τ_min)` once `t > τ_min`, `c` before that.
pub fn learning_rate(params: &ScheduleParams, agent: usize, t: usize) -> f64 {
    assert!(t >= 1, "rounds are 1-based");
    match params.protocol {
        Protocol::Ogd => 1.0 / (t as f64).sqrt(),
        Protocol::Cdogd => 1.0 / (2.0 * (t as f64).sqrt()),
        Protocol::Damtogd => {
            let tau_min = params.tau_min.get(agent).copied().unwrap_or(0);
            if t > tau_min {
                params.c / ((t - tau_min) as f64).sqrt()
            } else {
                params.c
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_examples() {
        let ogd = ScheduleParams::new(Protocol::Ogd, 1.0, vec![0]);
        assert_eq!(learning_rate(&ogd, 0, 4), 0.5);
        let cd = ScheduleParams::new(Protocol::Cdogd, 1.0, vec![0]);
        assert_eq!(learning_rate(&cd, 0, 1), 0.5);
        let dam = ScheduleParams::new(Protocol::Damtogd, 1.0, vec![2]);
        assert_eq!(learning_rate(&dam, 0, 6), 0.5);
        assert_eq!(learning_rate(&dam, 0, 1), 1.0);
    }

    #[test]
    fn rates_never_increase() {
        for protocol in Protocol::ALL {
            let p = ScheduleParams::new(protocol, 0.7, vec![0, 3, 8]);
            for agent in 0..3 {
                for t in 1..200 {
                    assert!(learning_rate(&p, agent, t + 1) <= learning_rate(&p, agent, t));
                }
            }
        }
    }

    #[test]
    fn protocol_names_round_trip() {
        for p in Protocol::ALL {
            assert_eq!(p.name().parse::<Protocol>().unwrap(), p);
        }
        assert!("sgd".parse::<Protocol>().is_err());
    }
}
