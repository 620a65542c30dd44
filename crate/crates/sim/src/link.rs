/// Abstract radio model: unit-disc connectivity with Bernoulli loss per hop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkModel {
    pub radio_range_m: f64,
    pub loss: f64,
    pub latency_ms: u64,
    pub seed: u64,
}

impl LinkModel {
    pub fn new(radio_range_m: f64, loss: f64, latency_ms: u64, seed: u64) -> Self {
        assert!(radio_range_m > 0.0, "radio range must be positive");
        assert!((0.0..=1.0).contains(&loss), "loss must lie in [0, 1]");
        LinkModel {
            radio_range_m,
            loss,
            latency_ms,
            seed,
        }
    }
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel::new(75.0, 0.0, 20, 1)
    }
}
