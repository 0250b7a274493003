//! Per-epoch training records.

/// One completed epoch. `seconds` is real wall time and therefore varies run
/// to run; the CSV form pins it so outputs stay byte-reproducible.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_dice: f64,
    pub train_bce: f64,
    pub val_dice: f64,
    pub val_bce: f64,
    pub seconds: f64,
    /// Whether this epoch's validation Dice loss improved on every earlier
    /// epoch and a checkpoint was written.
    pub saved: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn new() -> Self {
        TrainHistory::default()
    }

    /// Appends the next epoch; epochs must arrive in order, 1-based.
    pub fn push(&mut self, record: EpochRecord) {
        assert_eq!(record.epoch, self.records.len() + 1, "epochs must be recorded in order");
        self.records.push(record);
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// 1-based epoch with the lowest validation Dice loss (first on ties) —
    /// by construction also the last epoch flagged `saved`.
    pub fn best_epoch(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for r in &self.records {
            if best.is_none_or(|(_, v)| r.val_dice < v) {
                best = Some((r.epoch, r.val_dice));
            }
        }
        best.map(|(e, _)| e)
    }
}
