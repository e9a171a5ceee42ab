/// Stops after `patience` strictly consecutive increases of the epoch loss.
/// Any epoch that does not increase resets the count.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    increases: usize,
    last: Option<f64>,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            increases: 0,
            last: None,
        }
    }

    /// Records one epoch; returns true when training should stop.
    pub fn update(&mut self, loss: f64) -> bool {
        match self.last {
            Some(prev) if loss > prev => self.increases += 1,
            _ => self.increases = 0,
        }
        self.last = Some(loss);
        self.patience > 0 && self.increases >= self.patience
    }

    pub fn increases(&self) -> usize {
        self.increases
    }
}

/// One-based epoch at which `losses` would stop training, or the length of
/// the sequence if the rule never fires.
pub fn stopping_epoch(losses: &[f64], patience: usize) -> usize {
    let mut rule = EarlyStopping::new(patience);
    for (i, &l) in losses.iter().enumerate() {
        if rule.update(l) {
            return i + 1;
        }
    }
    losses.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn three_increases() {
        assert_eq!(stopping_epoch(&[1.0, 0.9, 0.92, 0.95, 0.97], 3), 5);
    }

    #[test]
    fn dip_resets_counter() {
        assert_eq!(stopping_epoch(&[1.0, 0.9, 0.92, 0.91, 0.95, 0.97, 0.99], 3), 7);
    }

    #[test]
    fn equal_loss_is_not_an_increase() {
        assert_eq!(stopping_epoch(&[1.0, 1.0, 1.0, 1.0, 1.0], 3), 5);
        assert_eq!(stopping_epoch(&[1.0, 2.0, 2.0, 3.0, 4.0], 3), 5);
    }

    proptest! {
        #[test]
        fn decreasing_never_stops(start in 1.0f64..10.0, steps in proptest::collection::vec(0.0f64..0.1, 1..500)) {
            let mut l = start;
            let losses: Vec<f64> = steps.iter().map(|s| { l -= s; l }).collect();
            prop_assert_eq!(stopping_epoch(&losses, 3), losses.len());
        }
    }
}
