/// Mean, population standard deviation and 95% normal-approximation
/// confidence half-width (`1.96 * std / sqrt(n)`) of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub ci95: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let count = values.len();
        if count == 0 {
            return Summary {
                count,
                mean: f64::NAN,
                std: f64::NAN,
                ci95: f64::NAN,
            };
        }
        let n = count as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Summary {
            count,
            mean,
            std,
            ci95: 1.96 * std / n.sqrt(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Summary {
        Summary {
            count: self.count,
            mean: self.mean * factor,
            std: self.std * factor,
            ci95: self.ci95 * factor,
        }
    }
}
