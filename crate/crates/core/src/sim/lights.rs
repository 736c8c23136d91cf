use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LightColor {
    Green,
    Red,
}

/// Two-phase periodic signal. Green while `(t + phase_offset) mod period < green_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficLight {
    pub id: usize,
    pub green_s: f64,
    pub red_s: f64,
    pub phase_offset: f64,
    /// Test override that pins the light to one color.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced: Option<LightColor>,
}

impl TrafficLight {
    pub fn new(id: usize, green_s: f64, red_s: f64, phase_offset: f64) -> Self {
        assert!(green_s > 0.0 && red_s > 0.0, "light durations must be positive");
        Self { id, green_s, red_s, phase_offset, forced: None }
    }

    pub fn period(&self) -> f64 {
        self.green_s + self.red_s
    }

    pub fn state(&self, t: f64) -> LightColor {
        if let Some(c) = self.forced {
            return c;
        }
        if (t + self.phase_offset).rem_euclid(self.period()) < self.green_s {
            LightColor::Green
        } else {
            LightColor::Red
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_periodic() {
        let l = TrafficLight::new(0, 13.0, 17.0, 5.0);
        assert_eq!(l.state(0.0), LightColor::Green);
        assert_eq!(l.state(7.9), LightColor::Green);
        assert_eq!(l.state(8.0), LightColor::Red);
        assert_eq!(l.state(24.9), LightColor::Red);
        assert_eq!(l.state(25.0), LightColor::Green);
        for k in 0..50 {
            let t = k as f64 * 0.7;
            assert_eq!(l.state(t), l.state(t + 30.0));
        }
    }
}
