//! Synthetic sensor signals.
//!
//! Values are a pure function of (seed, source, phenomenon, time, weather), so
//! they never consume the link-loss RNG and runs stay reproducible.

use std::f64::consts::TAU;
use std::time::Duration;

use citytb_core::{SimTime, Urn};

/// Saturated soil: tension stays in this band while it rains.
const WET_TENSION: (f64, f64) = (2.0, 4.0);
const MILD_TENSION: (f64, f64) = (8.0, 12.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weather {
    Mild,
    Rain,
    /// Soil dries out: tension climbs linearly from the wet band to `peak`
    /// over `ramp`, then holds at `peak`.
    Dry { peak: f64, ramp: Duration },
}

#[derive(Debug, Clone)]
pub struct Environment {
    seed: u64,
    timeline: Vec<(SimTime, Weather)>,
}

impl Environment {
    pub fn new(seed: u64) -> Self {
        Environment {
            seed,
            timeline: vec![(SimTime::ZERO, Weather::Mild)],
        }
    }

    /// Weather from `from` onwards. Later entries override earlier ones.
    pub fn set_weather(&mut self, from: SimTime, weather: Weather) {
        self.timeline.retain(|(t, _)| *t < from);
        self.timeline.push((from, weather));
    }

    pub fn weather_at(&self, t: SimTime) -> (SimTime, Weather) {
        self.timeline
            .iter()
            .rev()
            .find(|(since, _)| *since <= t)
            .copied()
            .unwrap_or((SimTime::ZERO, Weather::Mild))
    }

    /// Uniform value in [0, 1) keyed on everything that identifies a sample.
    pub fn noise(&self, source: &Urn, phenomenon: &str, t: SimTime) -> f64 {
        let mut h = fnv1a(self.seed.to_le_bytes().as_slice(), FNV_OFFSET);
        h = fnv1a(source.node_id().as_bytes(), h);
        h = fnv1a(phenomenon.as_bytes(), h);
        h = fnv1a(&t.as_millis().to_le_bytes(), h);
        (splitmix64(h) >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn sample(&self, source: &Urn, phenomenon: &str, t: SimTime) -> f64 {
        let n = self.noise(source, phenomenon, t);
        let day = (t.as_millis() % 86_400_000) as f64 / 86_400_000.0;
        let diurnal = (TAU * (day - 0.25)).sin();
        let (since, weather) = self.weather_at(t);
        let raining = weather == Weather::Rain;
        match phenomenon {
            "temperature" | "air-temperature" => 12.0 + 4.0 * diurnal + (n - 0.5),
            "soil-temperature" => 10.0 + 2.0 * diurnal + 0.5 * (n - 0.5),
            "relative-humidity" => {
                if raining {
                    85.0 + 10.0 * n
                } else {
                    65.0 - 10.0 * diurnal + 10.0 * (n - 0.5)
                }
            }
            "light" => (800.0 * diurnal).max(0.0) + 5.0 * n,
            "noise" => 55.0 + 10.0 * (n - 0.5) + 5.0 * diurnal,
            "co" => 0.4 + 0.3 * n,
            "no2" => 40.0 + 15.0 * (n - 0.5),
            "o3" => 60.0 + 20.0 * (n - 0.5),
            "particles" => 20.0 + 10.0 * n,
            "car-presence" => {
                if n < 0.6 {
                    1.0
                } else {
                    0.0
                }
            }
            "soil-moisture-tension" => soil_tension(weather, t.since(since), n),
            "rainfall" => {
                if raining {
                    0.5 + 3.5 * n
                } else {
                    0.0
                }
            }
            "solar-radiation" => (900.0 * diurnal).max(0.0) * if raining { 0.3 } else { 1.0 },
            "atmospheric-pressure" => {
                if raining {
                    1002.0 + 4.0 * n
                } else {
                    1015.0 + 4.0 * n
                }
            }
            "wind-speed" => 3.0 + 4.0 * n,
            "water-flow" => 0.0,
            _ => 100.0 * n,
        }
    }
}

fn soil_tension(weather: Weather, elapsed: Duration, n: f64) -> f64 {
    let band = |(lo, hi): (f64, f64)| lo + (hi - lo) * n;
    match weather {
        Weather::Rain => band(WET_TENSION),
        Weather::Mild => band(MILD_TENSION),
        Weather::Dry { peak, ramp } => {
            let start = WET_TENSION.1;
            if ramp.is_zero() || elapsed >= ramp {
                peak
            } else {
                start + (peak - start) * (elapsed.as_secs_f64() / ramp.as_secs_f64())
            }
        }
    }
}

pub(crate) const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

pub(crate) fn fnv1a(bytes: &[u8], mut h: u64) -> u64 {
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn urn() -> Urn {
        Urn::new("a", "b", "soil01").unwrap()
    }

    #[test]
    fn dry_spell_ramps_to_peak_and_holds() {
        let mut env = Environment::new(1);
        let day = Duration::from_secs(86_400);
        env.set_weather(SimTime::ZERO, Weather::Rain);
        env.set_weather(
            SimTime::ZERO + day * 14,
            Weather::Dry {
                peak: 28.0,
                ramp: day * 5,
            },
        );
        let wet = env.sample(&urn(), "soil-moisture-tension", SimTime::ZERO + day * 3);
        assert!((2.0..4.0).contains(&wet));
        let mid = env.sample(&urn(), "soil-moisture-tension", SimTime::ZERO + day * 16);
        assert!(mid > 4.0 && mid < 28.0);
        let late = env.sample(&urn(), "soil-moisture-tension", SimTime::ZERO + day * 20);
        assert_eq!(late, 28.0);
    }

    #[test]
    fn samples_are_reproducible() {
        let env = Environment::new(9);
        let t = SimTime::from_secs(1234);
        assert_eq!(
            env.sample(&urn(), "temperature", t),
            env.sample(&urn(), "temperature", t)
        );
        let n = env.noise(&urn(), "x", t);
        assert!((0.0..1.0).contains(&n));
    }
}
